use std::collections::HashMap;

fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map = HashMap::new();
    if n == 0 || tokens.len() < n {
        return map;
    }
    for gram in tokens.windows(n) {
        *map.entry(gram).or_insert(0) += 1;
    }
    map
}

/// Clipped multiset intersection size of the n-grams of `a` and `b`.
pub(crate) fn clipped_overlap(a: &[String], b: &[String], n: usize) -> usize {
    let ca = counts(a, n);
    let cb = counts(b, n);
    ca.iter()
        .map(|(g, c)| cb.get(g).map_or(0, |d| (*c).min(*d)))
        .sum()
}

fn ngram_total(tokens: &[String], n: usize) -> usize {
    (tokens.len() + 1).saturating_sub(n)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Bag-of-tokens F1. Both empty scores 1, exactly one empty scores 0.
pub fn token_f1(pred: &[String], reference: &[String]) -> f64 {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let common = clipped_overlap(pred, reference, 1);
    if common == 0 {
        return 0.0;
    }
    harmonic(
        common as f64 / pred.len() as f64,
        common as f64 / reference.len() as f64,
    )
}

/// ROUGE-N F-measure. Zero when either side has no n-grams.
pub fn rouge_n(pred: &[String], reference: &[String], n: usize) -> f64 {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let (tp, tr) = (ngram_total(pred, n), ngram_total(reference, n));
    if tp == 0 || tr == 0 {
        return 0.0;
    }
    let overlap = clipped_overlap(pred, reference, n) as f64;
    harmonic(overlap / tp as f64, overlap / tr as f64)
}

/// Matched and candidate n-gram counts for each order `1..=max_n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub pred_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(pred: &[String], reference: &[String], max_n: usize) -> Self {
        assert!(max_n >= 1, "bleu needs max_n >= 1");
        Self {
            matches: (1..=max_n)
                .map(|n| clipped_overlap(pred, reference, n))
                .collect(),
            totals: (1..=max_n).map(|n| ngram_total(pred, n)).collect(),
            pred_len: pred.len(),
            ref_len: reference.len(),
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            *self = other.clone();
            return;
        }
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.pred_len += other.pred_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of modified precisions times the brevity penalty.
    ///
    /// Orders for which the candidate has no n-grams at all are left out of
    /// the mean, so short identical answers still score 1. With `smoothing`,
    /// once any counted order has zero matches, orders above 1 use
    /// `(m + 1) / (t + 1)`.
    pub fn score(&self, smoothing: bool) -> f64 {
        if self.pred_len == 0 {
            return 0.0;
        }
        let orders: Vec<usize> = (0..self.totals.len())
            .filter(|&i| self.totals[i] > 0)
            .collect();
        let any_zero = orders.iter().any(|&i| self.matches[i] == 0);
        let mut log_sum = 0.0;
        for &i in &orders {
            let (m, t) = (self.matches[i] as f64, self.totals[i] as f64);
            let p = if smoothing && any_zero && i > 0 {
                (m + 1.0) / (t + 1.0)
            } else {
                m / t
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.pred_len as f64)
            .min(0.0)
            .exp();
        bp * (log_sum / orders.len() as f64).exp()
    }
}

pub fn bleu(pred: &[String], reference: &[String], max_n: usize, smoothing: bool) -> f64 {
    BleuStats::new(pred, reference, max_n).score(smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1(&toks("a b"), &toks("a b")), 1.0);
        assert_eq!(token_f1(&toks("a b"), &toks("c d")), 0.0);
        assert!((token_f1(&toks("the cat sat"), &toks("the cat")) - 0.8).abs() < 1e-12);
        assert_eq!(token_f1(&[], &[]), 1.0);
        assert_eq!(token_f1(&toks("a"), &[]), 0.0);
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu(&toks("a b c d e"), &toks("a b c d e"), 4, false), 1.0);
        let bp = (1.0f64 - 1.5).exp();
        assert!((bleu(&toks("the cat"), &toks("the cat sat"), 2, false) - bp).abs() < 1e-12);
        assert_eq!(bleu(&toks("a b c d x"), &toks("a b c y d"), 4, false), 0.0);
        assert!(bleu(&toks("a b c d x"), &toks("a b c y d"), 4, true) > 0.0);
        assert_eq!(bleu(&[], &toks("a"), 4, true), 0.0);
        assert_eq!(bleu(&toks("short"), &toks("short"), 4, false), 1.0);
    }

    #[test]
    fn rouge_n_examples() {
        assert_eq!(rouge_n(&toks("a b c"), &toks("a b c"), 2), 1.0);
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1), 0.0);
        assert!((rouge_n(&toks("a b d"), &toks("a c b"), 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), 0.0);
    }

    #[test]
    fn corpus_stats_accumulate() {
        let mut total = BleuStats::default();
        total.add(&BleuStats::new(&toks("a b"), &toks("a b"), 2));
        total.add(&BleuStats::new(&toks("c d"), &toks("c e"), 2));
        assert_eq!(total.matches, vec![3, 1]);
        assert_eq!(total.totals, vec![4, 2]);
    }
}
