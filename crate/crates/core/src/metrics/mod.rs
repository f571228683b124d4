//! Reference-based generation metrics: token F1, BLEU, METEOR, ROUGE-1/2/L/Lsum
//! and BERTScore. All overlap metrics share [`normalize_tokenize`].

mod bertscore;
mod lcs;
mod meteor;
mod overlap;
mod tokenize;

pub use bertscore::{bertscore, bertscore_from_vectors, BertScore};
pub use lcs::{lcs_len, rouge_l, rouge_lsum};
pub use meteor::{meteor, meteor_detail, MeteorDetail};
pub use overlap::{bleu, rouge_n, token_f1, BleuStats};
pub use tokenize::{normalize_tokenize, TokenSeq};

use crate::embedding::{EmbeddingError, EmbeddingProvider};
use serde::{Deserialize, Serialize};

/// Name of the tokenizer/normalization, recorded in reports.
pub const NORMALIZATION_ID: &str = "lower+punct-split+ws/v1";

/// Generative metric columns in report order.
pub const GEN_COLUMNS: [&str; 10] = [
    "f1",
    "meteor",
    "bleu",
    "rouge1",
    "rouge2",
    "rougeL",
    "rougeLsum",
    "bert_precision",
    "bert_recall",
    "bert_f1",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenScores {
    pub f1: f64,
    pub meteor: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: f64,
    pub bert_precision: f64,
    pub bert_recall: f64,
    pub bert_f1: f64,
}

impl GenScores {
    pub fn get(&self, column: &str) -> Option<f64> {
        Some(match column {
            "f1" => self.f1,
            "meteor" => self.meteor,
            "bleu" => self.bleu,
            "rouge1" => self.rouge1,
            "rouge2" => self.rouge2,
            "rougeL" => self.rouge_l,
            "rougeLsum" => self.rouge_lsum,
            "bert_precision" => self.bert_precision,
            "bert_recall" => self.bert_recall,
            "bert_f1" => self.bert_f1,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 10] {
        GEN_COLUMNS.map(|c| self.get(c).expect("known column"))
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        Self {
            f1: v[0],
            meteor: v[1],
            bleu: v[2],
            rouge1: v[3],
            rouge2: v[4],
            rouge_l: v[5],
            rouge_lsum: v[6],
            bert_precision: v[7],
            bert_recall: v[8],
            bert_f1: v[9],
        }
    }

    /// Arithmetic mean per field; `None` for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a GenScores>) -> Option<GenScores> {
        let mut sum = [0.0; 10];
        let mut n = 0usize;
        for s in items {
            for (acc, v) in sum.iter_mut().zip(s.values()) {
                *acc += v;
            }
            n += 1;
        }
        (n > 0).then(|| GenScores::from_values(sum.map(|v| v / n as f64)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub bleu_max_n: usize,
    pub bleu_smoothing: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            bleu_max_n: 4,
            bleu_smoothing: true,
        }
    }
}

/// Score one prediction against one reference.
pub fn score_pair(
    prediction: &str,
    reference: &str,
    config: &MetricConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<GenScores, EmbeddingError> {
    let pred = normalize_tokenize(prediction);
    let gold = normalize_tokenize(reference);
    let bert = bertscore(&pred, &gold, embedder)?;
    Ok(GenScores {
        f1: token_f1(&pred, &gold),
        meteor: meteor(&pred, &gold),
        bleu: bleu(&pred, &gold, config.bleu_max_n, config.bleu_smoothing),
        rouge1: rouge_n(&pred, &gold, 1),
        rouge2: rouge_n(&pred, &gold, 2),
        rouge_l: rouge_l(&pred, &gold),
        rouge_lsum: rouge_lsum(prediction, reference),
        bert_precision: bert.precision,
        bert_recall: bert.recall,
        bert_f1: bert.f1,
    })
}
