//! Text embedding providers shared by retrieval and BERTScore.
//!
//! Wire contract for remote providers: `POST {"input": [strings]}` answered
//! by `{"data": [{"embedding": [reals]}, ...]}`, one entry per input, all of
//! one fixed dimension.

use crate::registry::Registry;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in every index and report.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Concurrent requests the provider tolerates.
    fn max_in_flight(&self) -> usize {
        1
    }
    /// One vector per input, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// Scale to unit Euclidean norm; `None` for zero or non-finite vectors.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v
        .iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (*x as f64 / norm) as f32).collect())
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Offline, deterministic embedder: signed feature hashing of lowercase word
/// unigrams and boundary-marked character trigrams. Useful for tests and
/// air-gapped runs; it captures lexical overlap only.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    id: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("hash-v1/{dim}"),
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let mut add = |feature: &[u8], weight: f32| {
            let h = fnv1a(feature);
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign * weight;
        };
        for word in crate::metrics::normalize_tokenize(text).iter() {
            add(word.as_bytes(), 1.0);
            let marked: Vec<char> = format!("#{word}#").chars().collect();
            for tri in marked.windows(3) {
                add(tri.iter().collect::<String>().as_bytes(), 0.5);
            }
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_in_flight(&self) -> usize {
        usize::MAX
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

/// JSON-over-HTTP embedding client.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: Option<String>,
    dim: usize,
    batch_size: usize,
    max_in_flight: usize,
    id: String,
}

impl HttpEmbedder {
    pub fn new(config: &EmbedderConfig) -> Result<Self, EmbeddingError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| EmbeddingError::Transport("http embedder needs an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let id = config
            .id
            .clone()
            .or_else(|| config.model.clone())
            .unwrap_or_else(|| endpoint.clone());
        Ok(Self {
            client,
            endpoint,
            model: config.model.clone(),
            dim: config.dim,
            batch_size: config.batch_size.max(1),
            max_in_flight: config.max_in_flight.max(1),
            id,
        })
    }

    fn request(&self, batch: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let body = EmbedRequest {
            input: batch,
            model: self.model.as_deref(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbeddingError::Transport(format!("HTTP {status}: {text}")));
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| EmbeddingError::Malformed(e.to_string()))?;
        if parsed.data.len() != batch.len() {
            return Err(EmbeddingError::Malformed(format!(
                "{} inputs but {} embeddings",
                batch.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    Err(EmbeddingError::Dimension {
                        expected: self.dim,
                        got: d.embedding.len(),
                    })
                } else {
                    Ok(d.embedding)
                }
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.request(batch)?);
        }
        Ok(out)
    }
}

/// Counts `embed` calls and texts passing through an inner provider.
pub struct CountingEmbedder {
    inner: Arc<dyn EmbeddingProvider>,
    requests: AtomicUsize,
    texts: AtomicUsize,
}

impl CountingEmbedder {
    pub fn new(inner: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner,
            requests: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn texts(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for CountingEmbedder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed(texts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Registry name: `hash` or `http`.
    pub kind: String,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Identifier to record; defaults to the model name or endpoint.
    pub id: Option<String>,
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_s: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: "hash".into(),
            endpoint: None,
            model: None,
            id: None,
            dim: 384,
            batch_size: 64,
            max_in_flight: 1,
            timeout_s: 60,
        }
    }
}

pub type EmbedderRegistry = Registry<dyn EmbeddingProvider, EmbedderConfig>;

pub fn default_embedders() -> EmbedderRegistry {
    let mut reg = EmbedderRegistry::new("embedder");
    reg.register("hash", |c: &EmbedderConfig| {
        if c.dim == 0 {
            return Err("dim must be positive".into());
        }
        Ok(Box::new(HashingEmbedder::new(c.dim)))
    });
    reg.register("http", |c: &EmbedderConfig| {
        HttpEmbedder::new(c)
            .map(|e| Box::new(e) as Box<dyn EmbeddingProvider>)
            .map_err(|e| e.to_string())
    });
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_lexical() {
        let e = HashingEmbedder::new(64);
        let v = e
            .embed(&[
                "Carbon emissions".into(),
                "carbon emissions!".into(),
                "board".into(),
            ])
            .unwrap();
        assert_eq!(v[0], v[1]);
        let a = normalize(&v[0]).unwrap();
        let c = normalize(&v[2]).unwrap();
        assert!((dot(&a, &a) - 1.0).abs() < 1e-6);
        assert!(dot(&a, &c) < 0.9);
    }

    #[test]
    fn zero_vector_does_not_normalize() {
        assert!(normalize(&[0.0, 0.0]).is_none());
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    }

    #[test]
    fn counting_wrapper_counts() {
        let c = CountingEmbedder::new(Arc::new(HashingEmbedder::new(8)));
        c.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!((c.requests(), c.texts()), (1, 2));
    }

    #[test]
    fn registry_builds_hash_and_rejects_http_without_endpoint() {
        let reg = default_embedders();
        let cfg = EmbedderConfig::default();
        assert_eq!(reg.build("hash", &cfg).unwrap().id(), "hash-v1/384");
        assert!(reg.build("http", &cfg).is_err());
    }
}
