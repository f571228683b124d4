use super::{CheckpointError, DType, NamedTensorMap, Storage, TensorSpec};
use memmap2::Mmap;
use serde_json::{Map, Value};
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const METADATA_KEY: &str = "__metadata__";

/// Destination for tensors produced one at a time in storage order.
pub trait TensorSink {
    fn put(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        bytes: &[u8],
    ) -> Result<(), CheckpointError>;
}

/// In-memory map construction with eager invariant checks.
#[derive(Default)]
pub struct MapBuilder {
    metadata: BTreeMap<String, String>,
    specs: Vec<TensorSpec>,
    names: HashSet<String>,
    data: Vec<u8>,
}

impl MapBuilder {
    pub fn metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn set_metadata(&mut self, metadata: BTreeMap<String, String>) {
        self.metadata = metadata;
    }

    pub fn push(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        bytes: &[u8],
    ) -> Result<(), CheckpointError> {
        if name == METADATA_KEY {
            return Err(CheckpointError::Invariant(
                "`__metadata__` is reserved and cannot name a tensor".into(),
            ));
        }
        if !self.names.insert(name.to_string()) {
            return Err(CheckpointError::Invariant(format!(
                "duplicate tensor name `{name}`"
            )));
        }
        let expected = shape.iter().product::<usize>() * dtype.byte_width();
        if bytes.len() != expected {
            return Err(CheckpointError::Invariant(format!(
                "tensor `{name}` has {} bytes, shape {shape:?} of {dtype} needs {expected}",
                bytes.len()
            )));
        }
        let start = self.data.len();
        self.data.extend_from_slice(bytes);
        self.specs.push(TensorSpec {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            byte_range: start..self.data.len(),
        });
        Ok(())
    }

    /// Push `f32` values narrowed to `dtype`.
    pub fn push_values(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        values: &[f32],
    ) -> Result<(), CheckpointError> {
        self.push(name, dtype, shape, &super::narrow(dtype, values))
    }

    pub fn with_f32(mut self, name: &str, shape: &[usize], values: &[f32]) -> Self {
        self.push_values(name, DType::F32, shape, values)
            .expect("valid f32 tensor");
        self
    }

    pub fn build(self) -> NamedTensorMap {
        NamedTensorMap::assemble(self.metadata, self.specs, Storage::Owned(self.data))
    }
}

impl TensorSink for MapBuilder {
    fn put(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        bytes: &[u8],
    ) -> Result<(), CheckpointError> {
        self.push(name, dtype, shape, bytes)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize the JSON header for `entries` laid out contiguously, padded with
/// spaces to an 8-byte boundary.
fn encode_header(
    metadata: &BTreeMap<String, String>,
    entries: &[(String, DType, Vec<usize>)],
) -> Vec<u8> {
    let mut header = Map::new();
    if !metadata.is_empty() {
        let meta: Map<String, Value> = metadata
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        header.insert(METADATA_KEY.into(), Value::Object(meta));
    }
    let mut offset = 0usize;
    for (name, dtype, shape) in entries {
        let len = shape.iter().product::<usize>() * dtype.byte_width();
        let mut entry = Map::new();
        entry.insert("dtype".into(), Value::String(dtype.as_str().into()));
        entry.insert("shape".into(), Value::from(shape.clone()));
        entry.insert(
            "data_offsets".into(),
            Value::from(vec![offset, offset + len]),
        );
        header.insert(name.clone(), Value::Object(entry));
        offset += len;
    }
    let mut bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    while !bytes.len().is_multiple_of(8) {
        bytes.push(b' ');
    }
    bytes
}

/// Streaming checkpoint writer: the header is fixed up front, tensors are
/// appended in the declared order, and the file appears atomically on
/// [`CheckpointWriter::finish`].
pub struct CheckpointWriter {
    entries: Vec<(String, DType, Vec<usize>)>,
    next: usize,
    out: BufWriter<tempfile::NamedTempFile>,
    path: std::path::PathBuf,
}

impl CheckpointWriter {
    pub fn create(
        path: impl AsRef<Path>,
        metadata: &BTreeMap<String, String>,
        entries: Vec<(String, DType, Vec<usize>)>,
    ) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let mut names = HashSet::new();
        for (name, _, _) in &entries {
            if name == METADATA_KEY || !names.insert(name.as_str()) {
                return Err(CheckpointError::Invariant(format!(
                    "duplicate or reserved tensor name `{name}`"
                )));
            }
        }
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => std::path::PathBuf::from("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(path))?;
        let mut out = BufWriter::new(tmp);
        let header = encode_header(metadata, &entries);
        out.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| out.write_all(&header))
            .map_err(io_err(path))?;
        Ok(Self {
            entries,
            next: 0,
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn write_tensor(&mut self, name: &str, bytes: &[u8]) -> Result<(), CheckpointError> {
        let Some((expected, dtype, shape)) = self.entries.get(self.next) else {
            return Err(CheckpointError::Writer(format!(
                "tensor `{name}` written after all declared tensors"
            )));
        };
        if expected != name {
            return Err(CheckpointError::Writer(format!(
                "expected tensor `{expected}` next, got `{name}`"
            )));
        }
        let len = shape.iter().product::<usize>() * dtype.byte_width();
        if bytes.len() != len {
            return Err(CheckpointError::Writer(format!(
                "tensor `{name}` declared {len} bytes, got {}",
                bytes.len()
            )));
        }
        self.out.write_all(bytes).map_err(io_err(&self.path))?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<(), CheckpointError> {
        if self.next != self.entries.len() {
            return Err(CheckpointError::Writer(format!(
                "{} of {} declared tensors written",
                self.next,
                self.entries.len()
            )));
        }
        let path = self.path;
        let tmp = self
            .out
            .into_inner()
            .map_err(|e| io_err(&path)(e.into_error()))?;
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        Ok(())
    }
}

impl TensorSink for CheckpointWriter {
    fn put(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[usize],
        bytes: &[u8],
    ) -> Result<(), CheckpointError> {
        match self.entries.get(self.next) {
            Some((_, d, s)) if *d == dtype && s.as_slice() == shape => {}
            _ => {
                return Err(CheckpointError::Writer(format!(
                    "tensor `{name}` does not match the declared layout"
                )))
            }
        }
        self.write_tensor(name, bytes)
    }
}

/// Write `map` atomically (temp file + rename). Invariant violations are
/// refused before anything touches the filesystem.
pub fn save_checkpoint(
    map: &NamedTensorMap,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    map.validate()?;
    let entries = map
        .specs()
        .iter()
        .map(|s| (s.name.clone(), s.dtype, s.shape.clone()))
        .collect();
    let mut writer = CheckpointWriter::create(path, map.metadata(), entries)?;
    for spec in map.specs() {
        writer.write_tensor(&spec.name, map.tensor_bytes(spec))?;
    }
    writer.finish()
}

/// Memory-map a checkpoint and index its tensors. Tensor bytes are paged in
/// lazily, so multi-gigabyte files cost only their header up front.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NamedTensorMap, CheckpointError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    if len == 0 {
        return Err(CheckpointError::Truncated {
            offset: 0,
            detail: "empty file, expected an 8-byte header length".into(),
        });
    }
    // SAFETY: the mapping is read-only; concurrent truncation of the file by
    // another process is outside the supported usage.
    let map = unsafe { Mmap::map(&file) }.map_err(io_err(path))?;
    let (metadata, specs, start) = parse_layout(&map)?;
    Ok(NamedTensorMap::assemble(
        metadata,
        specs,
        Storage::Mapped { map, start },
    ))
}

/// Metadata, tensor specs, and where the data region starts.
type Layout = (BTreeMap<String, String>, Vec<TensorSpec>, usize);

/// Parse the header of an in-memory container. Exposed for fuzzing and tests.
pub(crate) fn parse_layout(bytes: &[u8]) -> Result<Layout, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated {
            offset: bytes.len() as u64,
            detail: format!("{} bytes, expected an 8-byte header length", bytes.len()),
        });
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let file_len = bytes.len() as u64;
    if header_len > file_len - 8 {
        return Err(CheckpointError::Truncated {
            offset: 8,
            detail: format!(
                "header declares {header_len} bytes but only {} follow",
                file_len - 8
            ),
        });
    }
    let header_end = 8 + header_len as usize;
    let header_bytes = &bytes[8..header_end];
    let header: Map<String, Value> =
        serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::MalformedHeader {
            offset: 8 + json_error_offset(header_bytes, e.line(), e.column()),
            detail: e.to_string(),
        })?;
    let data_len = bytes.len() - header_end;
    let key_offset = |name: &str| -> u64 {
        let needle = serde_json::to_string(name).unwrap_or_default();
        8 + find(header_bytes, needle.as_bytes()).unwrap_or(0) as u64
    };
    let malformed = |name: &str, detail: String| CheckpointError::MalformedHeader {
        offset: key_offset(name),
        detail: format!("tensor `{name}`: {detail}"),
    };

    let mut metadata = BTreeMap::new();
    let mut specs = Vec::with_capacity(header.len());
    for (name, entry) in &header {
        if name == METADATA_KEY {
            let Value::Object(table) = entry else {
                return Err(malformed(name, "metadata must be an object".into()));
            };
            for (k, v) in table {
                let Value::String(v) = v else {
                    return Err(malformed(
                        name,
                        format!("metadata value for `{k}` is not a string"),
                    ));
                };
                metadata.insert(k.clone(), v.clone());
            }
            continue;
        }
        let Value::Object(entry) = entry else {
            return Err(malformed(name, "entry is not an object".into()));
        };
        let dtype_tag = entry
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(name, "missing dtype".into()))?;
        let dtype = DType::parse(dtype_tag).ok_or_else(|| CheckpointError::UnknownDtype {
            name: name.clone(),
            dtype: dtype_tag.to_string(),
            offset: key_offset(name),
        })?;
        let shape = entry
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(name, "missing shape".into()))?
            .iter()
            .map(|d| d.as_u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| malformed(name, "shape entries must be non-negative integers".into()))?;
        let offsets = entry
            .get("data_offsets")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 2)
            .and_then(|a| Some((a[0].as_u64()? as usize, a[1].as_u64()? as usize)))
            .ok_or_else(|| malformed(name, "data_offsets must be two integers".into()))?;
        let spec = TensorSpec {
            name: name.clone(),
            dtype,
            shape,
            byte_range: offsets.0..offsets.1,
        };
        if offsets.1 < offsets.0 {
            return Err(malformed(name, "data_offsets are reversed".into()));
        }
        if offsets.1 > data_len {
            return Err(CheckpointError::Truncated {
                offset: (header_end + offsets.1) as u64,
                detail: format!(
                    "tensor `{name}` ends at data byte {} but the data block holds {data_len}",
                    offsets.1
                ),
            });
        }
        if spec.byte_range.len() != spec.expected_bytes() {
            return Err(malformed(
                name,
                format!(
                    "spans {} bytes but shape {:?} of {} needs {}",
                    spec.byte_range.len(),
                    spec.shape,
                    dtype,
                    spec.expected_bytes()
                ),
            ));
        }
        specs.push(spec);
    }
    // Storage order is data order; the stable sort keeps header order for
    // zero-length tensors sharing an offset.
    specs.sort_by_key(|s| s.byte_range.start);
    for pair in specs.windows(2) {
        if pair[1].byte_range.start < pair[0].byte_range.end {
            return Err(CheckpointError::Overlap {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
                offset: (header_end + pair[1].byte_range.start) as u64,
            });
        }
    }
    Ok((metadata, specs, header_end))
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn json_error_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut current = 1;
    let mut line_start = 0;
    for (i, b) in text.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(text.len()) as u64
}
