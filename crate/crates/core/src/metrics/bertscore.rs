use crate::embedding::{dot, normalize, EmbeddingError, EmbeddingProvider};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy cosine matching over per-token embeddings. No IDF weighting and
/// no baseline rescaling. Best-match similarities are clamped to `[0, 1]`.
pub fn bertscore_from_vectors(pred: &[Vec<f32>], reference: &[Vec<f32>]) -> BertScore {
    if pred.is_empty() || reference.is_empty() {
        return BertScore::default();
    }
    let unit = |v: &Vec<f32>| normalize(v);
    let p: Vec<Option<Vec<f32>>> = pred.iter().map(unit).collect();
    let r: Vec<Option<Vec<f32>>> = reference.iter().map(unit).collect();
    let sim = |a: &Option<Vec<f32>>, b: &Option<Vec<f32>>| match (a, b) {
        (Some(a), Some(b)) => dot(a, b),
        _ => 0.0,
    };
    let best = |from: &[Option<Vec<f32>>], to: &[Option<Vec<f32>>]| -> f64 {
        from.iter()
            .map(|a| {
                to.iter()
                    .map(|b| sim(a, b))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .clamp(0.0, 1.0)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(&p, &r);
    let recall = best(&r, &p);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    BertScore {
        precision,
        recall,
        f1,
    }
}

/// Embed each token (deduplicated, one request) and score.
pub fn bertscore(
    pred: &[String],
    reference: &[String],
    embedder: &dyn EmbeddingProvider,
) -> Result<BertScore, EmbeddingError> {
    if pred.is_empty() || reference.is_empty() {
        return Ok(BertScore::default());
    }
    let mut unique: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for t in pred.iter().chain(reference) {
        slot.entry(t.as_str()).or_insert_with(|| {
            unique.push(t.clone());
            unique.len() - 1
        });
    }
    let vectors = embedder.embed(&unique)?;
    if vectors.len() != unique.len() {
        return Err(EmbeddingError::Malformed(format!(
            "{} tokens but {} vectors",
            unique.len(),
            vectors.len()
        )));
    }
    let lookup = |seq: &[String]| -> Vec<Vec<f32>> {
        seq.iter()
            .map(|t| vectors[slot[t.as_str()]].clone())
            .collect()
    };
    Ok(bertscore_from_vectors(&lookup(pred), &lookup(reference)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;

    #[test]
    fn hand_cosine_table() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let s = bertscore_from_vectors(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![h, h]],
        );
        let expected = (1.0 + std::f64::consts::FRAC_1_SQRT_2) / 2.0;
        assert!((s.precision - expected).abs() < 1e-6);
        assert!((s.recall - expected).abs() < 1e-6);
        assert!((s.f1 - expected).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_is_zero() {
        let s = bertscore_from_vectors(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]);
        assert_eq!(s, BertScore::default());
    }

    #[test]
    fn identical_tokens_score_one() {
        let toks: Vec<String> = ["scope", "three", "emissions"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = bertscore(&toks, &toks, &HashingEmbedder::new(32)).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-6);
        let empty = bertscore(&[], &toks, &HashingEmbedder::new(32)).unwrap();
        assert_eq!(empty, BertScore::default());
    }
}
