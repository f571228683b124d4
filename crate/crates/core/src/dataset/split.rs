use super::{DatasetError, Pillar, QaTriplet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    /// 70 / 10 / 20.
    pub fn standard(seed: u64) -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DatasetError::InvalidSplit(format!(
                "fractions must be non-negative, got {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub train: Vec<QaTriplet>,
    pub val: Vec<QaTriplet>,
    pub test: Vec<QaTriplet>,
}

impl Partition {
    pub fn parts(&self) -> [&[QaTriplet]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Largest-remainder apportionment of `n` items; remainder ties go to the
/// earlier split.
pub fn split_counts(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        // Snap values within rounding noise of an integer before flooring.
        let nearest = q.round();
        *c = if (q - nearest).abs() < 1e-9 {
            nearest
        } else {
            q.floor()
        } as usize;
    }
    let mut remaining = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() < 1e-9 {
            a.cmp(&b)
        } else {
            rb.partial_cmp(&ra).unwrap()
        }
    });
    for i in order.into_iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Shuffle each pillar with a seeded Fisher–Yates pass, then slice it by
/// [`split_counts`]. Pillars are processed in a fixed order from a single
/// RNG stream, so the result depends only on the input order and the seed.
pub fn stratified_split(items: &[QaTriplet], spec: &SplitSpec) -> Result<Partition, DatasetError> {
    spec.validate()?;
    if items.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut partition = Partition::default();
    for pillar in Pillar::ALL {
        let mut group: Vec<&QaTriplet> = items.iter().filter(|t| t.pillar == pillar).collect();
        group.shuffle(&mut rng);
        let [n_train, n_val, _] = split_counts(group.len(), &spec.fractions);
        for (i, item) in group.into_iter().enumerate() {
            let target = if i < n_train {
                &mut partition.train
            } else if i < n_train + n_val {
                &mut partition.val
            } else {
                &mut partition.test
            };
            target.push(item.clone());
        }
    }
    Ok(partition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    /// pillar → split → count
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub totals: BTreeMap<String, usize>,
    /// SHA-256 over the three output files in train, val, test order.
    pub content_hash: String,
}

/// Write `train.jsonl`, `val.jsonl`, `test.jsonl` and `manifest.json` to `dir`.
pub fn write_split(
    dir: impl AsRef<Path>,
    partition: &Partition,
    spec: &SplitSpec,
) -> Result<SplitManifest, DatasetError> {
    let dir = dir.as_ref();
    let io = |source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut totals = BTreeMap::new();
    for (name, part) in SPLIT_NAMES.iter().zip(partition.parts()) {
        let mut buf = Vec::new();
        for item in part {
            serde_json::to_writer(&mut buf, item).expect("triplet serializes");
            buf.push(b'\n');
            *counts
                .entry(item.pillar.to_string())
                .or_default()
                .entry(name.to_string())
                .or_default() += 1;
        }
        hasher.update(&buf);
        std::fs::write(dir.join(format!("{name}.jsonl")), &buf).map_err(io)?;
        totals.insert(name.to_string(), part.len());
    }
    for pillar_counts in counts.values_mut() {
        for name in SPLIT_NAMES {
            pillar_counts.entry(name.to_string()).or_default();
        }
    }
    let manifest = SplitManifest {
        seed: spec.seed,
        fractions: spec.fractions,
        counts,
        totals,
        content_hash: hex::encode(hasher.finalize()),
    };
    let mut f = std::fs::File::create(dir.join("manifest.json")).map_err(io)?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(io)?;
    Ok(manifest)
}
