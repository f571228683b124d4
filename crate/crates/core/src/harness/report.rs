use super::{aggregate_rank, HarnessError, ModelRow, RankOutcome, RunConfig, RunEnv, Transcript};
use crate::eco::{write_consumption_csv, write_consumption_markdown, ConsumptionRow};
use crate::metrics::{GEN_COLUMNS, NORMALIZATION_ID};
use crate::readability::{EasyWords, READABILITY_COLUMNS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const RANK_RULE: &str =
    "competition rank per generative column (higher is better), mean over columns, competition rank of the means";

/// Provenance of one run. The only place a timestamp is written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub fingerprint: String,
    pub templates: BTreeMap<String, String>,
    pub backend: String,
    pub retrieval_embedder: String,
    pub index_embedder: Option<String>,
    pub bert_embedder: String,
    pub easy_words_sha256: String,
    pub normalization: String,
    pub dataset_sha256: String,
    pub rank_rule: String,
    pub created_unix_s: u64,
}

impl RunManifest {
    pub fn new(config: &RunConfig, env: &RunEnv, dataset_sha256: String) -> Self {
        let t = env.mode.template();
        Self {
            config: config.clone(),
            fingerprint: config.fingerprint(),
            templates: BTreeMap::from([(t.id(), t.sha256())]),
            backend: format!("{}:{}", env.backend.id(), env.backend.model()),
            retrieval_embedder: env.embedder.id().to_string(),
            index_embedder: env.index.as_ref().map(|i| i.embedder_id().to_string()),
            bert_embedder: env.scorer.id().to_string(),
            easy_words_sha256: EasyWords::get().sha256().to_string(),
            normalization: NORMALIZATION_ID.to_string(),
            dataset_sha256,
            rank_rule: RANK_RULE.to_string(),
            created_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

fn row_label(r: &ModelRow) -> String {
    r.model_label.clone()
}

/// Rank rows on the generative columns; rows without scores are excluded.
pub fn rank_rows(rows: &[ModelRow]) -> RankOutcome {
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| match &r.scores {
            Some(s) => s.values().iter().map(|v| Some(*v)).collect(),
            None => vec![None; GEN_COLUMNS.len()],
        })
        .collect();
    aggregate_rank(&values)
}

/// Store the aggregate rank of each row in `rows`.
pub fn assign_ranks(rows: &mut [ModelRow]) {
    let out = rank_rows(rows);
    for (row, rank) in rows.iter_mut().zip(out.ranks) {
        row.rank = rank;
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Config(format!("{}: {e}", path.display()))
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
}

pub fn write_generative_csv<W: Write>(rows: &[ModelRow], out: W) -> csv::Result<()> {
    let ranks = rank_rows(rows);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "mode"];
    header.extend(GEN_COLUMNS);
    header.extend(["mean_rank", "rank", "n_items", "n_failed"]);
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![row_label(r), r.mode.to_string()];
        for c in GEN_COLUMNS {
            rec.push(opt(r.scores.and_then(|s| s.get(c)), 6));
        }
        rec.push(opt(ranks.mean_ranks[i], 3));
        rec.push(ranks.ranks[i].map(|x| x.to_string()).unwrap_or_default());
        rec.push(r.n_items.to_string());
        rec.push(r.n_failed.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_generative_markdown(rows: &[ModelRow]) -> String {
    let ranks = rank_rows(rows);
    let mut s = String::from("| Model | Mode |");
    for c in GEN_COLUMNS {
        s.push_str(&format!(" {c} |"));
    }
    s.push_str(" Rank |\n|---|---|");
    s.push_str(&"---:|".repeat(GEN_COLUMNS.len() + 1));
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!("| {} | {} |", row_label(r), r.mode));
        for c in GEN_COLUMNS {
            let v = r.scores.and_then(|x| x.get(c));
            s.push_str(&format!(
                " {} |",
                v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
            ));
        }
        let rank = ranks.ranks[i]
            .map(|x| x.to_string())
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(" {rank} |\n"));
    }
    s
}

pub fn write_readability_csv<W: Write>(rows: &[ModelRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "mode"];
    header.extend(READABILITY_COLUMNS);
    header.push("n_degenerate");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![row_label(r), r.mode.to_string()];
        match &r.readability {
            Some(rd) => rec.extend(rd.values().iter().map(|v| format!("{v:.4}"))),
            None => rec.extend(READABILITY_COLUMNS.map(|_| String::new())),
        }
        rec.push(r.n_degenerate.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_readability_markdown(rows: &[ModelRow]) -> String {
    let mut s = String::from("| Model | Mode |");
    for c in READABILITY_COLUMNS {
        s.push_str(&format!(" {c} |"));
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---:|".repeat(READABILITY_COLUMNS.len()));
    s.push('\n');
    for r in rows {
        s.push_str(&format!("| {} | {} |", row_label(r), r.mode));
        match &r.readability {
            Some(rd) => {
                for v in rd.values() {
                    s.push_str(&format!(" {v:.2} |"));
                }
            }
            None => s.push_str(&" - |".repeat(READABILITY_COLUMNS.len())),
        }
        s.push('\n');
    }
    s
}

/// Accuracy against cost, one line per row.
pub fn write_tradeoff_csv<W: Write>(rows: &[ModelRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "mode", "f1", "bert_f1", "time_h", "co2_kg"])?;
    for r in rows {
        w.write_record([
            row_label(r),
            r.mode.to_string(),
            opt(r.scores.map(|s| s.f1), 6),
            opt(r.scores.map(|s| s.bert_f1), 6),
            format!("{:.3}", r.consumption.time_h),
            format!("{:.6}", r.consumption.co2_kg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_row(path: &Path) -> Result<ModelRow, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn to_buf(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>,
) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| csv_err(path, e))?;
    Ok(buf)
}

/// Write the table files for `rows` into `dir`. When given, transcripts,
/// the single-run row and the manifest are written too.
pub fn emit_reports(
    dir: &Path,
    rows: &[ModelRow],
    transcripts: Option<&[Transcript]>,
    manifest: Option<&RunManifest>,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let p = dir.join("generative.csv");
    write_file(&p, &to_buf(&p, |b| write_generative_csv(rows, b))?)?;
    write_file(
        &dir.join("generative.md"),
        write_generative_markdown(rows).as_bytes(),
    )?;
    let p = dir.join("readability.csv");
    write_file(&p, &to_buf(&p, |b| write_readability_csv(rows, b))?)?;
    write_file(
        &dir.join("readability.md"),
        write_readability_markdown(rows).as_bytes(),
    )?;
    let consumption: Vec<ConsumptionRow> = rows.iter().map(|r| r.consumption.clone()).collect();
    let p = dir.join("consumption.csv");
    write_file(&p, &to_buf(&p, |b| write_consumption_csv(&consumption, b))?)?;
    write_file(
        &dir.join("consumption.md"),
        write_consumption_markdown(&consumption).as_bytes(),
    )?;
    let p = dir.join("tradeoff.csv");
    write_file(&p, &to_buf(&p, |b| write_tradeoff_csv(rows, b))?)?;
    if let Some(ts) = transcripts {
        let mut buf = Vec::new();
        for t in ts {
            serde_json::to_writer(&mut buf, t).expect("transcript serializes");
            buf.push(b'\n');
        }
        write_file(&dir.join("transcripts.jsonl"), &buf)?;
        if let [row] = rows {
            let json = serde_json::to_vec_pretty(row).expect("row serializes");
            write_file(&dir.join("row.json"), &json)?;
        }
    }
    if let Some(m) = manifest {
        let json = serde_json::to_vec_pretty(m).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &json)?;
    }
    Ok(())
}
