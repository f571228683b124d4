//! Generative rank: per column, rows are ranked best-first with competition
//! ties; each row's ranks are averaged; the averages are ranked again with
//! competition ties (lowest mean first).

use super::HarnessError;
use std::path::Path;

/// Competition ranks (1-2-2-4). `descending` ranks larger values first.
/// Values must be finite.
pub fn competition_ranks(values: &[f64], descending: bool) -> Vec<u32> {
    values
        .iter()
        .map(|v| {
            let better = values
                .iter()
                .filter(|o| if descending { *o > v } else { *o < v })
                .count();
            better as u32 + 1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    /// `None` for rows excluded because a column value was missing.
    pub ranks: Vec<Option<u32>>,
    pub mean_ranks: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// Rank rows of `values[row][column]`, higher is better in every column.
/// Rows with a missing or non-finite value are excluded and reported.
pub fn aggregate_rank(values: &[Vec<Option<f64>>]) -> RankOutcome {
    let complete: Vec<usize> = (0..values.len())
        .filter(|&r| values[r].iter().all(|v| v.is_some_and(f64::is_finite)))
        .collect();
    let excluded: Vec<usize> = (0..values.len())
        .filter(|r| !complete.contains(r))
        .collect();
    for r in &excluded {
        tracing::warn!(
            row = r,
            "row has missing metric values; excluded from ranking"
        );
    }
    let mut ranks = vec![None; values.len()];
    let mut mean_ranks = vec![None; values.len()];
    if complete.is_empty() {
        return RankOutcome {
            ranks,
            mean_ranks,
            excluded,
        };
    }
    let ncols = values[complete[0]].len();
    let mut sums = vec![0u64; complete.len()];
    #[allow(clippy::needless_range_loop)]
    for c in 0..ncols {
        let col: Vec<f64> = complete.iter().map(|&r| values[r][c].unwrap()).collect();
        for (s, rank) in sums.iter_mut().zip(competition_ranks(&col, true)) {
            *s += rank as u64;
        }
    }
    // Compare integer rank sums: equal means are exactly equal sums.
    let sums_f: Vec<f64> = sums.iter().map(|&s| s as f64).collect();
    let final_ranks = competition_ranks(&sums_f, false);
    for (i, &r) in complete.iter().enumerate() {
        ranks[r] = Some(final_ranks[i]);
        mean_ranks[r] = Some(if ncols == 0 {
            0.0
        } else {
            sums[i] as f64 / ncols as f64
        });
    }
    RankOutcome {
        ranks,
        mean_ranks,
        excluded,
    }
}

/// Kendall's τ-b between two paired score lists.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired lists must have equal length");
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            let db = (b[i] - b[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + ties_a) as f64;
    let n1 = (concordant + discordant + ties_b) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / (n0 * n1).sqrt()
}

/// A labelled numeric table, such as results from several runs to rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub labels: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl RankTable {
    /// Read a CSV whose first column is the row label. `columns` picks the
    /// metric columns; when empty, every known generative column present in
    /// the header is used. Empty cells are missing values.
    pub fn from_csv(path: &Path, columns: &[String]) -> Result<Self, HarnessError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let wanted: Vec<String> = if columns.is_empty() {
            crate::metrics::GEN_COLUMNS
                .iter()
                .filter(|c| header.iter().any(|h| h == *c))
                .map(|c| c.to_string())
                .collect()
        } else {
            columns.to_vec()
        };
        if wanted.is_empty() {
            return Err(HarnessError::Config(format!(
                "{}: no metric columns to rank",
                path.display()
            )));
        }
        let positions: Vec<usize> = wanted
            .iter()
            .map(|c| {
                header.iter().position(|h| h == c).ok_or_else(|| {
                    HarnessError::Config(format!("{}: no column `{c}`", path.display()))
                })
            })
            .collect::<Result<_, _>>()?;
        let mut table = RankTable {
            labels: Vec::new(),
            columns: wanted,
            values: Vec::new(),
        };
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            table.labels.push(rec.get(0).unwrap_or("").to_string());
            let mut row = Vec::with_capacity(positions.len());
            for &p in &positions {
                let cell = rec.get(p).unwrap_or("");
                row.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|e| {
                        HarnessError::Config(format!(
                            "{}: row {}: `{cell}`: {e}",
                            path.display(),
                            i + 2
                        ))
                    })?)
                });
            }
            table.values.push(row);
        }
        Ok(table)
    }

    pub fn rank(&self) -> RankOutcome {
        aggregate_rank(&self.values)
    }
}
