//! Evaluation harness: runs a model over a QA set in one knowledge-base
//! mode, scores every answer, meters energy and writes reports.

mod config;
mod modes;
mod rank;
mod report;
mod run;
mod transcript;

pub use config::{Clock, EnergyConfig, Mode, RunConfig, ScoringConfig};
pub use modes::{
    default_modes, strip_reasoning, ExternalKb, ItemError, ModeEnv, ModeOutput, ModeRegistry,
    ModeSpec, ModeStrategy, NativeKb, ZeroShot,
};
pub use rank::{aggregate_rank, competition_ranks, kendall_tau, RankOutcome, RankTable};
pub use report::{
    assign_ranks, emit_reports, rank_rows, read_row, write_generative_csv,
    write_generative_markdown, write_readability_csv, write_readability_markdown,
    write_tradeoff_csv, RunManifest, RANK_RULE,
};
pub use run::{run_eval, ModelRow, RunEnv, RunOptions, RunOutcome, ToolCallStats};
pub use transcript::{read_transcripts, ItemStatus, Journal, Transcript, JOURNAL_FORMAT};

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Registry(#[from] crate::registry::RegistryError),
    #[error(transparent)]
    Eco(#[from] crate::eco::EcoError),
    #[error("journal {path}: {detail}")]
    Journal { path: PathBuf, detail: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn journal(path: &Path, detail: impl Into<String>) -> Self {
        HarnessError::Journal {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}
