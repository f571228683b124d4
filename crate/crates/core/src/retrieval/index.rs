use super::RetrievalError;
use crate::embedding::{dot, normalize, EmbeddingProvider};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const INDEX_FORMAT: &str = "esg-forge-kb/v1";
const MANIFEST_FILE: &str = "manifest.json";
const VECTORS_FILE: &str = "vectors.f32";
const IDS_FILE: &str = "ids.json";
const CONTEXTS_FILE: &str = "contexts.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
}

/// Dense, exact-search index over unit-normalized document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KbIndex {
    doc_ids: Vec<String>,
    /// Row-major, `doc_ids.len() * dim`.
    vectors: Vec<f32>,
    dim: usize,
    embedder_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub dim: usize,
    pub embedder_id: String,
    pub doc_count: usize,
    /// SHA-256 of the vector file.
    pub vectors_sha256: String,
}

fn sort_hits(hits: &mut [RetrievalHit]) {
    hits.sort_by(hit_order);
}

fn hit_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl KbIndex {
    /// Build from raw (unnormalized) vectors. Rejects duplicate ids, ragged
    /// rows and zero vectors.
    pub fn from_vectors(
        doc_ids: Vec<String>,
        rows: Vec<Vec<f32>>,
        embedder_id: &str,
    ) -> Result<Self, RetrievalError> {
        if doc_ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if doc_ids.len() != rows.len() {
            return Err(RetrievalError::Malformed(format!(
                "{} ids but {} vectors",
                doc_ids.len(),
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(RetrievalError::DuplicateId(id.clone()));
            }
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(RetrievalError::Malformed("zero-dimensional vectors".into()));
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (id, row) in doc_ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(RetrievalError::Embedding(
                    crate::embedding::EmbeddingError::Dimension {
                        expected: dim,
                        got: row.len(),
                    },
                ));
            }
            let unit = normalize(row).ok_or_else(|| RetrievalError::ZeroVector(id.clone()))?;
            vectors.extend(unit);
        }
        Ok(Self {
            doc_ids,
            vectors,
            dim,
            embedder_id: embedder_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by dot product against a query vector. The query is
    /// normalized first; a zero query scores every document 0.
    pub fn search_vector(
        &self,
        query: &[f32],
        k: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::Embedding(
                crate::embedding::EmbeddingError::Dimension {
                    expected: self.dim,
                    got: query.len(),
                },
            ));
        }
        let q = normalize(query).unwrap_or_else(|| vec![0.0; self.dim]);
        let mut hits: Vec<RetrievalHit> = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| RetrievalHit {
                doc_id: id.clone(),
                score: dot(self.row(i), &q),
            })
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        sort_hits(&mut hits);
        Ok(hits)
    }

    pub fn retrieve(
        &self,
        query: &str,
        k: usize,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if embedder.id() != self.embedder_id {
            return Err(RetrievalError::EmbedderMismatch {
                index: self.embedder_id.clone(),
                query: embedder.id().to_string(),
            });
        }
        let mut v = embedder.embed(&[query.to_string()])?;
        let q = v
            .pop()
            .ok_or_else(|| RetrievalError::Malformed("embedder returned no vector".into()))?;
        self.search_vector(&q, k)
    }

    fn vector_bytes(&self) -> Vec<u8> {
        self.vectors.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            format: INDEX_FORMAT.into(),
            dim: self.dim,
            embedder_id: self.embedder_id.clone(),
            doc_count: self.doc_ids.len(),
            vectors_sha256: hex::encode(Sha256::digest(self.vector_bytes())),
        }
    }

    /// Write manifest, vectors, ids and (optionally) passage texts to `dir`.
    pub fn save(
        &self,
        dir: &Path,
        contexts: Option<&BTreeMap<String, String>>,
    ) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir).map_err(|e| RetrievalError::io(dir, e))?;
        write_atomic(&dir.join(VECTORS_FILE), &self.vector_bytes())?;
        write_atomic(&dir.join(IDS_FILE), &to_json(&self.doc_ids)?)?;
        if let Some(ctx) = contexts {
            write_atomic(&dir.join(CONTEXTS_FILE), &to_json(ctx)?)?;
        }
        write_atomic(&dir.join(MANIFEST_FILE), &to_json(&self.manifest())?)
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest: IndexManifest = read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format != INDEX_FORMAT {
            return Err(RetrievalError::Malformed(format!(
                "unsupported index format `{}`",
                manifest.format
            )));
        }
        let ids: Vec<String> = read_json(&dir.join(IDS_FILE))?;
        let path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&path).map_err(|e| RetrievalError::io(&path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != manifest.vectors_sha256 {
            return Err(RetrievalError::Malformed(format!(
                "vector file hash {digest} does not match manifest"
            )));
        }
        if ids.len() != manifest.doc_count || bytes.len() != manifest.doc_count * manifest.dim * 4 {
            return Err(RetrievalError::Malformed(format!(
                "expected {} docs of dim {}, found {} ids and {} bytes",
                manifest.doc_count,
                manifest.dim,
                ids.len(),
                bytes.len()
            )));
        }
        let vectors = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            doc_ids: ids,
            vectors,
            dim: manifest.dim,
            embedder_id: manifest.embedder_id,
        })
    }
}

/// Passage texts stored next to an index, if any.
pub fn load_contexts(dir: &Path) -> Result<BTreeMap<String, String>, RetrievalError> {
    read_json(&dir.join(CONTEXTS_FILE))
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, RetrievalError> {
    let mut out =
        serde_json::to_vec_pretty(value).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RetrievalError> {
    let text = fs::read_to_string(path).map_err(|e| RetrievalError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| RetrievalError::Malformed(format!("{}: {e}", path.display())))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RetrievalError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RetrievalError::io(path, e))?;
    tmp.write_all(bytes)
        .map_err(|e| RetrievalError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| RetrievalError::io(path, e.error))?;
    Ok(())
}

/// Embed every context in batches of `batch_size` and build the index.
pub fn build_index(
    contexts: &[(String, String)],
    embedder: &dyn EmbeddingProvider,
    batch_size: usize,
) -> Result<KbIndex, RetrievalError> {
    if contexts.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut rows = Vec::with_capacity(contexts.len());
    let texts: Vec<String> = contexts.iter().map(|(_, t)| t.clone()).collect();
    for batch in texts.chunks(batch_size.max(1)) {
        let vectors = embedder.embed(batch)?;
        if vectors.len() != batch.len() {
            return Err(RetrievalError::Malformed(format!(
                "{} texts but {} vectors",
                batch.len(),
                vectors.len()
            )));
        }
        for v in &vectors {
            if v.len() != embedder.dim() {
                return Err(RetrievalError::Embedding(
                    crate::embedding::EmbeddingError::Dimension {
                        expected: embedder.dim(),
                        got: v.len(),
                    },
                ));
            }
        }
        rows.extend(vectors);
    }
    let ids = contexts.iter().map(|(id, _)| id.clone()).collect();
    KbIndex::from_vectors(ids, rows, embedder.id())
}
