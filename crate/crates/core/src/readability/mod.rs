//! Readability scores for generated responses: Flesch reading ease,
//! Flesch–Kincaid grade, Gunning fog, SMOG, ARI, Coleman–Liau, Linsear
//! Write and Dale–Chall, plus the difficult-word, syllable and sentence
//! counts they are built from.

mod text;

pub use text::{count_syllables, split_sentences, words};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::sync::OnceLock;

const EASY_WORDS: &str = include_str!("../../data/easy_words.txt");

/// Words sampled for Linsear Write.
pub const LINSEAR_SAMPLE: usize = 100;

/// Report column headers, in table order.
pub const READABILITY_COLUMNS: [&str; 11] = [
    "FRE",
    "FKG",
    "Fog",
    "SMOG",
    "ARI",
    "CLI",
    "Linsear",
    "DaleChall",
    "DiffWords",
    "Syllables",
    "Sentences",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReadabilityError {
    #[error("readability is undefined for text with {words} words and {sentences} sentences")]
    Degenerate { words: usize, sentences: usize },
}

/// Dale–Chall familiar-word list, loaded once.
pub struct EasyWords {
    words: HashSet<&'static str>,
    sha256: String,
}

impl EasyWords {
    pub fn get() -> &'static EasyWords {
        static LIST: OnceLock<EasyWords> = OnceLock::new();
        LIST.get_or_init(|| EasyWords {
            words: EASY_WORDS
                .lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .collect(),
            sha256: hex::encode(Sha256::digest(EASY_WORDS.as_bytes())),
        })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word.to_lowercase().as_str())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Hash of the shipped list, recorded in run manifests.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    /// Letters and digits inside words.
    pub letters: usize,
    pub syllables: usize,
    /// Words of three or more syllables.
    pub polysyllables: usize,
    /// Words with letters that are not on the familiar-word list.
    pub difficult_words: usize,
    /// Words in the Linsear sample (the first 100).
    pub linsear_words: usize,
    /// Sample words of at most two syllables.
    pub linsear_easy: usize,
    /// Sample words of three or more syllables.
    pub linsear_hard: usize,
}

pub fn compute_stats(text: &str) -> TextStats {
    let easy = EasyWords::get();
    let tokens = words(text);
    let mut stats = TextStats {
        words: tokens.len(),
        sentences: if tokens.is_empty() {
            0
        } else {
            split_sentences(text).len().max(1)
        },
        ..Default::default()
    };
    for (i, w) in tokens.iter().enumerate() {
        let syl = count_syllables(w).max(1);
        stats.letters += w.chars().filter(|c| c.is_alphanumeric()).count();
        stats.syllables += syl;
        if syl >= 3 {
            stats.polysyllables += 1;
        }
        if w.chars().any(char::is_alphabetic) && !easy.contains(w) {
            stats.difficult_words += 1;
        }
        if i < LINSEAR_SAMPLE {
            stats.linsear_words += 1;
            if syl >= 3 {
                stats.linsear_hard += 1;
            } else {
                stats.linsear_easy += 1;
            }
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityReport {
    pub fre: f64,
    pub fkg: f64,
    pub fog: f64,
    pub smog: f64,
    pub ari: f64,
    pub cli: f64,
    pub linsear: f64,
    pub dale_chall: f64,
    pub diff_words: f64,
    pub syllables: f64,
    pub sentences: f64,
}

impl ReadabilityReport {
    pub fn values(&self) -> [f64; 11] {
        [
            self.fre,
            self.fkg,
            self.fog,
            self.smog,
            self.ari,
            self.cli,
            self.linsear,
            self.dale_chall,
            self.diff_words,
            self.syllables,
            self.sentences,
        ]
    }

    pub fn from_values(v: [f64; 11]) -> Self {
        Self {
            fre: v[0],
            fkg: v[1],
            fog: v[2],
            smog: v[3],
            ari: v[4],
            cli: v[5],
            linsear: v[6],
            dale_chall: v[7],
            diff_words: v[8],
            syllables: v[9],
            sentences: v[10],
        }
    }

    /// Per-field arithmetic mean; `None` for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ReadabilityReport>) -> Option<Self> {
        let mut sum = [0.0; 11];
        let mut n = 0usize;
        for r in items {
            for (acc, v) in sum.iter_mut().zip(r.values()) {
                *acc += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_values(sum.map(|v| v / n as f64)))
    }
}

/// SMOG is calibrated on 30-sentence samples; fewer sentences lower its
/// reliability.
pub fn smog_low_confidence(stats: &TextStats) -> bool {
    stats.sentences < 30
}

pub fn readability_scores(stats: &TextStats) -> Result<ReadabilityReport, ReadabilityError> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(ReadabilityError::Degenerate {
            words: stats.words,
            sentences: stats.sentences,
        });
    }
    let w = stats.words as f64;
    let s = stats.sentences as f64;
    let syl = stats.syllables as f64;
    let poly = stats.polysyllables as f64;
    let diff = stats.difficult_words as f64;
    let letters = stats.letters as f64;
    let wps = w / s;
    let spw = syl / w;

    let letters_per_100 = letters / w * 100.0;
    let sentences_per_100 = s / w * 100.0;

    // Sentences prorated to the sample size.
    let sample_sentences = s * stats.linsear_words as f64 / w;
    let r = (stats.linsear_easy as f64 + 3.0 * stats.linsear_hard as f64) / sample_sentences;
    let linsear = if r > 20.0 { r / 2.0 } else { r / 2.0 - 1.0 };

    let pct_difficult = 100.0 * diff / w;
    let mut dale_chall = 0.1579 * pct_difficult + 0.0496 * wps;
    if diff / w > 0.05 {
        dale_chall += 3.6365;
    }

    Ok(ReadabilityReport {
        fre: 206.835 - 1.015 * wps - 84.6 * spw,
        fkg: 0.39 * wps + 11.8 * spw - 15.59,
        fog: 0.4 * (wps + 100.0 * poly / w),
        smog: 1.0430 * (poly * 30.0 / s).sqrt() + 3.1291,
        ari: 4.71 * (letters / w) + 0.5 * wps - 21.43,
        cli: 0.0588 * letters_per_100 - 0.296 * sentences_per_100 - 15.8,
        linsear,
        dale_chall,
        diff_words: diff,
        syllables: syl,
        sentences: s,
    })
}

/// Stats and scores for one text.
pub fn analyze(text: &str) -> Result<(TextStats, ReadabilityReport), ReadabilityError> {
    let stats = compute_stats(text);
    readability_scores(&stats).map(|r| (stats, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_sentence_stats() {
        let s = compute_stats("The cat sat on the mat.");
        assert_eq!(
            (
                s.words,
                s.sentences,
                s.syllables,
                s.polysyllables,
                s.letters
            ),
            (6, 1, 6, 0, 17)
        );
        assert_eq!(s.difficult_words, 0);
    }

    #[test]
    fn cat_sentence_scores() {
        let r = readability_scores(&compute_stats("The cat sat on the mat.")).unwrap();
        assert!((r.fre - 116.145).abs() < 1e-9);
        assert!((r.fkg - -1.45).abs() < 1e-9);
        assert!((r.fog - 0.4 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_degenerate() {
        assert_eq!(compute_stats(""), TextStats::default());
        assert!(readability_scores(&TextStats::default()).is_err());
    }

    #[test]
    fn difficult_single_word() {
        let s = compute_stats("photosynthesis");
        assert_eq!((s.difficult_words, s.polysyllables, s.sentences), (1, 1, 1));
    }

    #[test]
    fn easy_word_list_loaded() {
        let list = EasyWords::get();
        assert!(list.len() > 2900);
        assert!(list.contains("People"));
        assert!(list.contains("don't"));
        assert_eq!(list.sha256().len(), 64);
    }

    #[test]
    fn smog_flag() {
        let s = compute_stats("One short sentence.");
        assert!(smog_low_confidence(&s));
    }

    #[test]
    fn linsear_long_text_prorates_sentences() {
        let text = "Word ".repeat(150) + ".";
        let s = compute_stats(&text);
        assert_eq!(
            (s.linsear_words, s.linsear_easy, s.sentences),
            (100, 100, 1)
        );
        let r = readability_scores(&s).unwrap();
        // 100 easy words over 100/150 of a sentence: r = 150 > 20.
        assert!((r.linsear - 75.0).abs() < 1e-9);
    }
}
