//! Counting heuristics: syllables, sentence boundaries, words.

const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u', 'y'];

/// Abbreviations whose trailing period does not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "inc", "ltd",
    "corp", "co", "no", "fig", "approx", "dept", "est", "govt", "u.s", "u.k", "cf", "al",
];

fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c)
}

/// Vowel groups (`a e i o u y`), minus one for a silent trailing `e`
/// (an `e` after a consonant, except consonant + `le`). Never below 1 for a
/// word with letters; 0 for input without letters.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return 0;
    }
    let mut groups = 0;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = letters.len();
    if n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) && groups > 1 {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Split on runs of `.`, `!`, `?` (plus closing quotes/brackets) followed by
/// whitespace or end of text. A lone period after a listed abbreviation does
/// not split. Text without a terminator is one sentence; blank text is none.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let run_len = j - i;
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        let abbreviation = run_len == 1 && c == '.' && ends_with_abbreviation(&text[start..pos]);
        if at_boundary && !abbreviation {
            let end = if j == chars.len() {
                text.len()
            } else {
                chars[j].0
            };
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                out.push(sentence.to_string());
            }
            start = end;
        }
        i = j;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// Whitespace-separated tokens with edge punctuation removed; tokens without
/// any letter or digit are dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .replace('\u{2019}', "'")
        })
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syllable_examples() {
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("people"), 2);
        assert_eq!(count_syllables("strengths"), 1);
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("agree"), 2);
        assert_eq!(count_syllables("photosynthesis"), 5);
        assert_eq!(count_syllables("2050"), 0);
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("A. B? C!").len(), 3);
        assert_eq!(split_sentences("no terminator"), vec!["no terminator"]);
        assert_eq!(
            split_sentences("Dr. Smith left. He returned."),
            vec!["Dr. Smith left.", "He returned."]
        );
        assert!(split_sentences("   ").is_empty());
        assert_eq!(
            split_sentences("Emissions fell 3.5%. Good?! \"Yes.\" Done").len(),
            4
        );
    }

    #[test]
    fn word_tokens() {
        assert_eq!(
            words("The cat sat on the mat."),
            ["The", "cat", "sat", "on", "the", "mat"]
        );
        assert_eq!(words("net-zero — by 2050!"), ["net-zero", "by", "2050"]);
    }
}
