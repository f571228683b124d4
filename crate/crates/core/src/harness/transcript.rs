use super::{HarnessError, ItemError, Mode};
use crate::backend::{Exchange, Usage};
use crate::eco::EnergyRecord;
use crate::metrics::GenScores;
use crate::readability::ReadabilityReport;
use crate::retrieval::{RetrievalHit, StepOutcome};
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const JOURNAL_FORMAT: &str = "esg-forge-journal/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    Failed { error: ItemError },
}

/// Everything recorded for one item. Exchanges are kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub item_id: String,
    pub mode: Mode,
    pub model_label: String,
    pub question: String,
    pub reference: String,
    pub prompt: String,
    pub hits: Vec<RetrievalHit>,
    pub tool_calls: Vec<StepOutcome>,
    pub raw_output: String,
    /// Output after reasoning blocks are stripped; what gets scored.
    pub answer: String,
    pub latency_s: f64,
    pub energy: EnergyRecord,
    #[serde(flatten)]
    pub status: ItemStatus,
    pub exchanges: Vec<Exchange>,
    pub steps: usize,
    pub truncated: bool,
    pub usage: Usage,
    pub scores: Option<GenScores>,
    pub readability: Option<ReadabilityReport>,
    pub readability_degenerate: bool,
}

impl Transcript {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, ItemStatus::Ok)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalHeader {
    format: String,
    fingerprint: String,
}

/// Append-only JSONL record of finished items. The first line ties the
/// journal to a config fingerprint.
pub struct Journal {
    file: File,
    path: PathBuf,
}

impl Journal {
    /// Open a journal. Without `resume` an existing file is an error. With
    /// it, completed lines are returned and a torn trailing line is cut off.
    pub fn open(
        path: &Path,
        fingerprint: &str,
        resume: bool,
    ) -> Result<(Journal, Vec<Transcript>), HarnessError> {
        if path.exists() && !resume {
            return Err(HarnessError::journal(
                path,
                "already exists; pass --resume to continue it or remove it",
            ));
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| HarnessError::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| HarnessError::io(path, e))?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                bytes = bytes.len() - complete,
                "discarding torn trailing journal line"
            );
        }
        let mut lines = bytes[..complete]
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty());
        let mut done = Vec::new();
        match lines.next() {
            None => {
                file.set_len(0).map_err(|e| HarnessError::io(path, e))?;
                file.seek(SeekFrom::Start(0))
                    .map_err(|e| HarnessError::io(path, e))?;
                let header = JournalHeader {
                    format: JOURNAL_FORMAT.into(),
                    fingerprint: fingerprint.into(),
                };
                let mut line = serde_json::to_vec(&header).expect("header serializes");
                line.push(b'\n');
                file.write_all(&line)
                    .map_err(|e| HarnessError::io(path, e))?;
                file.sync_data().map_err(|e| HarnessError::io(path, e))?;
            }
            Some(first) => {
                let header: JournalHeader = serde_json::from_slice(first)
                    .map_err(|e| HarnessError::journal(path, format!("bad header: {e}")))?;
                if header.format != JOURNAL_FORMAT {
                    return Err(HarnessError::journal(
                        path,
                        format!("format `{}`, expected `{JOURNAL_FORMAT}`", header.format),
                    ));
                }
                if header.fingerprint != fingerprint {
                    return Err(HarnessError::journal(
                        path,
                        "was written under a different configuration",
                    ));
                }
                for (i, line) in lines.enumerate() {
                    let t: Transcript = serde_json::from_slice(line)
                        .map_err(|e| HarnessError::journal(path, format!("line {}: {e}", i + 2)))?;
                    done.push(t);
                }
                file.set_len(complete as u64)
                    .map_err(|e| HarnessError::io(path, e))?;
                file.seek(SeekFrom::End(0))
                    .map_err(|e| HarnessError::io(path, e))?;
            }
        }
        Ok((
            Journal {
                file,
                path: path.to_path_buf(),
            },
            done,
        ))
    }

    /// Write one line and sync it to disk.
    pub fn append(&mut self, t: &Transcript) -> Result<(), HarnessError> {
        let mut line = serde_json::to_vec(t).expect("transcript serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| HarnessError::io(&self.path, e))
    }
}

/// Read a transcripts JSONL file (no header line).
pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            HarnessError::Config(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
