use super::tokenize::normalize_tokenize;
use std::collections::HashMap;

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<u32>> {
    let mut t = vec![vec![0u32; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    lcs_table(a, b)[a.len()][b.len()] as usize
}

/// Indices into `a` of one longest common subsequence with `b`.
fn lcs_indices(a: &[String], b: &[String]) -> Vec<usize> {
    let t = lcs_table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] >= t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

fn f_measure(hits: f64, pred_len: usize, ref_len: usize) -> f64 {
    if pred_len == 0 || ref_len == 0 || hits == 0.0 {
        return 0.0;
    }
    let p = hits / pred_len as f64;
    let r = hits / ref_len as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-L: LCS-based F-measure over whole sequences.
pub fn rouge_l(pred: &[String], reference: &[String]) -> f64 {
    f_measure(lcs_len(pred, reference) as f64, pred.len(), reference.len())
}

/// ROUGE-Lsum: split both texts into sentences, take for each reference
/// sentence the union of its LCS hits against every predicted sentence,
/// clip hits by token counts on both sides, and form the F-measure.
pub fn rouge_lsum(pred: &str, reference: &str) -> f64 {
    let sentences = |text: &str| -> Vec<Vec<String>> {
        crate::readability::split_sentences(text)
            .iter()
            .map(|s| normalize_tokenize(s).into_inner())
            .filter(|s| !s.is_empty())
            .collect()
    };
    let pred_s = sentences(pred);
    let ref_s = sentences(reference);
    let pred_len: usize = pred_s.iter().map(Vec::len).sum();
    let ref_len: usize = ref_s.iter().map(Vec::len).sum();
    if pred_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let mut pred_counts: HashMap<&str, usize> = HashMap::new();
    for t in pred_s.iter().flatten() {
        *pred_counts.entry(t).or_default() += 1;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in ref_s.iter().flatten() {
        *ref_counts.entry(t).or_default() += 1;
    }
    let mut hits = 0usize;
    for r in &ref_s {
        let mut union: Vec<usize> = pred_s.iter().flat_map(|c| lcs_indices(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for idx in union {
            let tok = r[idx].as_str();
            let (Some(rc), Some(pc)) = (ref_counts.get_mut(tok), pred_counts.get_mut(tok)) else {
                continue;
            };
            if *rc > 0 && *pc > 0 {
                *rc -= 1;
                *pc -= 1;
                hits += 1;
            }
        }
    }
    f_measure(hits as f64, pred_len, ref_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &toks("a b c")), 1.0);
        assert!((rouge_l(&toks("a b d"), &toks("a c b")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&[], &toks("a")), 0.0);
    }

    #[test]
    fn lsum_single_sentence_matches_rouge_l() {
        let p = "Board oversight of climate risk is annual";
        let r = "The board reviews climate risk annually";
        let expected = rouge_l(&normalize_tokenize(p), &normalize_tokenize(r));
        assert!((rouge_lsum(p, r) - expected).abs() < 1e-12);
        assert_eq!(
            rouge_lsum("Same text. Two sentences.", "Same text. Two sentences."),
            1.0
        );
    }

    #[test]
    fn lsum_unions_across_sentences() {
        // Reference sentence "a b c d" is covered half by each predicted sentence.
        let score = rouge_lsum("a b. c d.", "a b c d.");
        assert_eq!(score, 1.0);
        assert!(rouge_l(&toks("a b c d"), &toks("c d a b")) < 1.0);
    }
}
