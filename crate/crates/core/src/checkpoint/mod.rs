//! Named-tensor checkpoint container.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of JSON
//! mapping tensor name to `{dtype, shape, data_offsets}` (plus an optional
//! `__metadata__` string table), then the raw little-endian data block.
//! Offsets are relative to the start of the data block.

mod align;
mod dtype;
mod io;

pub use align::{validate_alignment, AlignmentReport, Mismatch};
pub use dtype::{narrow, widen, DType};
pub use io::{load_checkpoint, save_checkpoint, CheckpointWriter, MapBuilder, TensorSink};

use memmap2::Mmap;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::{Deref, Range};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file at byte {offset}: {detail}")]
    Truncated { offset: u64, detail: String },
    #[error("malformed header at byte {offset}: {detail}")]
    MalformedHeader { offset: u64, detail: String },
    #[error("unknown dtype `{dtype}` for tensor `{name}` at byte {offset}")]
    UnknownDtype {
        name: String,
        dtype: String,
        offset: u64,
    },
    #[error("tensors `{first}` and `{second}` overlap at byte {offset}")]
    Overlap {
        first: String,
        second: String,
        offset: u64,
    },
    #[error("invalid tensor map: {0}")]
    Invariant(String),
    #[error("writer protocol violation: {0}")]
    Writer(String),
}

/// Location and layout of one tensor within a data block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_range: Range<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn expected_bytes(&self) -> usize {
        self.numel() * self.dtype.byte_width()
    }
}

/// Backing bytes of a map: owned in memory or mapped from disk.
pub(crate) enum Storage {
    Owned(Vec<u8>),
    Mapped { map: Mmap, start: usize },
}

impl Deref for Storage {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        match self {
            Storage::Owned(v) => v,
            Storage::Mapped { map, start } => &map[*start..],
        }
    }
}

/// Ordered map from tensor name to `(dtype, shape, bytes)`.
///
/// Read-only once built; arithmetic produces new maps.
pub struct NamedTensorMap {
    metadata: BTreeMap<String, String>,
    specs: Vec<TensorSpec>,
    index: HashMap<String, usize>,
    data: Storage,
}

impl NamedTensorMap {
    pub fn builder() -> MapBuilder {
        MapBuilder::default()
    }

    /// Assemble a map without checking invariants. [`save_checkpoint`]
    /// validates before writing, so broken maps are refused there.
    pub fn from_raw_parts(
        metadata: BTreeMap<String, String>,
        specs: Vec<TensorSpec>,
        data: Vec<u8>,
    ) -> Self {
        Self::assemble(metadata, specs, Storage::Owned(data))
    }

    pub(crate) fn assemble(
        metadata: BTreeMap<String, String>,
        specs: Vec<TensorSpec>,
        data: Storage,
    ) -> Self {
        let index = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Self {
            metadata,
            specs,
            index,
            data,
        }
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Specs in storage order.
    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Raw stored bytes of a tensor.
    pub fn bytes(&self, name: &str) -> Option<&[u8]> {
        self.spec(name).map(|s| &self.data[s.byte_range.clone()])
    }

    pub fn tensor_bytes(&self, spec: &TensorSpec) -> &[u8] {
        &self.data[spec.byte_range.clone()]
    }

    /// Tensor values widened to `f32`.
    pub fn to_f32(&self, name: &str) -> Option<Vec<f32>> {
        self.spec(name)
            .map(|s| widen(s.dtype, self.tensor_bytes(s)))
    }

    pub fn data_len(&self) -> usize {
        self.data.len()
    }

    /// Check every container invariant: unique names, byte lengths matching
    /// shapes, and non-overlapping in-bounds ranges.
    pub fn validate(&self) -> Result<(), CheckpointError> {
        let mut seen = HashSet::new();
        for spec in &self.specs {
            if spec.name == "__metadata__" {
                return Err(CheckpointError::Invariant(
                    "`__metadata__` is reserved and cannot name a tensor".into(),
                ));
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(CheckpointError::Invariant(format!(
                    "duplicate tensor name `{}`",
                    spec.name
                )));
            }
            if spec.byte_range.end < spec.byte_range.start {
                return Err(CheckpointError::Invariant(format!(
                    "tensor `{}` has a reversed byte range",
                    spec.name
                )));
            }
            if spec.byte_range.len() != spec.expected_bytes() {
                return Err(CheckpointError::Invariant(format!(
                    "tensor `{}` spans {} bytes but shape {:?} of {} needs {}",
                    spec.name,
                    spec.byte_range.len(),
                    spec.shape,
                    spec.dtype,
                    spec.expected_bytes()
                )));
            }
            if spec.byte_range.end > self.data.len() {
                return Err(CheckpointError::Invariant(format!(
                    "tensor `{}` ends at byte {} past the data block ({} bytes)",
                    spec.name,
                    spec.byte_range.end,
                    self.data.len()
                )));
            }
        }
        let mut by_start: Vec<&TensorSpec> = self.specs.iter().collect();
        by_start.sort_by_key(|s| (s.byte_range.start, s.byte_range.end));
        for pair in by_start.windows(2) {
            if pair[1].byte_range.start < pair[0].byte_range.end {
                return Err(CheckpointError::Overlap {
                    first: pair[0].name.clone(),
                    second: pair[1].name.clone(),
                    offset: pair[1].byte_range.start as u64,
                });
            }
        }
        Ok(())
    }
}

impl PartialEq for NamedTensorMap {
    /// Equal when metadata, spec order, dtypes, shapes and tensor bytes agree.
    /// Byte offsets are a layout detail and are not compared.
    fn eq(&self, other: &Self) -> bool {
        self.metadata == other.metadata
            && self.specs.len() == other.specs.len()
            && self.specs.iter().zip(&other.specs).all(|(a, b)| {
                a.name == b.name
                    && a.dtype == b.dtype
                    && a.shape == b.shape
                    && self.tensor_bytes(a) == other.tensor_bytes(b)
            })
    }
}

impl std::fmt::Debug for NamedTensorMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NamedTensorMap")
            .field("metadata", &self.metadata)
            .field("specs", &self.specs)
            .field("data_len", &self.data.len())
            .finish()
    }
}
