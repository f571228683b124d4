//! Knowledge-base retrieval: exact cosine index, prompt assembly for
//! programmatic injection, tool-call parsing and the agentic tool loop.

mod index;
mod nkb;
mod prompt;
mod toolcall;

pub use index::{build_index, load_contexts, IndexManifest, KbIndex, RetrievalHit, INDEX_FORMAT};
pub use nkb::{
    run_nkb_loop, tool_schema, NkbEnv, NkbError, NkbResult, StepOutcome, DEFAULT_TOOL_NAME,
};
pub use prompt::{
    assemble_ekb_prompt, escape_block, parse_ekb_prompt, unescape_block, ParsedPassage,
    ParsedPrompt, Template, TEMPLATES,
};
pub use toolcall::{
    classify_response, parse_tool_call, ToolCallKind, ToolCallOutcome, NEAR_MISS_DISTANCE,
};

use crate::embedding::EmbeddingError;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` embedded to a zero vector")]
    ZeroVector(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index was built with embedder `{index}` but queries use `{query}`")]
    EmbedderMismatch { index: String, query: String },
    #[error("no context text for document `{0}`")]
    MissingContext(String),
    #[error("unknown template: {0}")]
    UnknownTemplate(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed: {0}")]
    Malformed(String),
}

impl RetrievalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
