//! Weight-space arithmetic over checkpoints: low-rank adapter merging and
//! instruction-residual extraction/application.
//!
//! Every operation widens stored values to `f32`, computes, and narrows the
//! result with round-to-nearest-even. Tensors are streamed one at a time in
//! storage order through a [`TensorSink`], so writing straight to disk keeps
//! peak memory at the size of the largest tensor.

mod lora;
mod residual;

pub use lora::{merge_lora, merge_lora_into, LoraAdapter, LoraTarget, MergeSummary};
pub use residual::{
    apply_residual, apply_residual_into, extract_residual, extract_residual_into, IrmOptions,
    IrmSummary, NonFiniteWarning, OutputDType, ResidualDelta,
};

use crate::checkpoint::{AlignmentReport, CheckpointError};

#[derive(Debug, thiserror::Error)]
pub enum ArithmeticError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("adapter targets `{0}`, which the base checkpoint does not contain")]
    UnknownTarget(String),
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid adapter: {0}")]
    InvalidAdapter(String),
    #[error("checkpoints are not aligned: {0}")]
    Alignment(AlignmentReport),
    #[error("tensor `{name}` has {count} non-finite values after arithmetic")]
    NonFinite { name: String, count: usize },
}
