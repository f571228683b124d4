use super::ArithmeticError;
use crate::checkpoint::{narrow, MapBuilder, NamedTensorMap, TensorSink};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Low-rank update for one base matrix: `delta = (alpha / rank) * B * A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraTarget {
    /// `rank x cols`, row-major.
    pub a: Vec<f32>,
    /// `rows x rank`, row-major.
    pub b: Vec<f32>,
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
    pub alpha: f32,
}

impl LoraTarget {
    /// Build a target, checking factor sizes and the low-rank condition.
    /// `alpha` defaults to `rank`, which makes the scale exactly 1.
    pub fn new(
        rows: usize,
        cols: usize,
        rank: usize,
        b: Vec<f32>,
        a: Vec<f32>,
        alpha: Option<f32>,
    ) -> Result<Self, ArithmeticError> {
        if rank == 0 {
            return Err(ArithmeticError::InvalidAdapter(
                "rank must be positive".into(),
            ));
        }
        if rank > rows.min(cols) {
            return Err(ArithmeticError::InvalidAdapter(format!(
                "rank {rank} exceeds min({rows}, {cols})"
            )));
        }
        if a.len() != rank * cols {
            return Err(ArithmeticError::InvalidAdapter(format!(
                "A holds {} values, expected {rank}x{cols}",
                a.len()
            )));
        }
        if b.len() != rows * rank {
            return Err(ArithmeticError::InvalidAdapter(format!(
                "B holds {} values, expected {rows}x{rank}",
                b.len()
            )));
        }
        let alpha = alpha.unwrap_or(rank as f32);
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(ArithmeticError::InvalidAdapter(format!(
                "alpha must be finite and non-negative, got {alpha}"
            )));
        }
        Ok(Self {
            a,
            b,
            rank,
            rows,
            cols,
            alpha,
        })
    }

    pub fn scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    /// `weight + scale * B * A`, accumulated in `f32`.
    pub fn apply(&self, weight: &[f32]) -> Vec<f32> {
        let scale = self.scale();
        let mut out = weight.to_vec();
        out.par_chunks_mut(self.cols.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let b_row = &self.b[i * self.rank..(i + 1) * self.rank];
                for (j, w) in row.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for (t, bv) in b_row.iter().enumerate() {
                        acc += bv * self.a[t * self.cols + j];
                    }
                    *w += scale * acc;
                }
            });
        out
    }
}

/// Adapter keyed by base tensor name, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoraAdapter {
    pub targets: Vec<(String, LoraTarget)>,
}

const PEFT_PREFIX: &str = "base_model.model.";

impl LoraAdapter {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, target: LoraTarget) {
        self.targets.push((name.into(), target));
    }

    /// Read an adapter from a checkpoint whose tensors are named
    /// `<target>.lora_A` / `<target>.lora_B` (or the common
    /// `<target-stem>.lora_A.weight` form, mapping to `<target-stem>.weight`).
    /// Scaling comes from `lora_alpha`/`alpha` and `r`/`rank` metadata;
    /// `alpha_override` wins over both.
    pub fn from_checkpoint(
        map: &NamedTensorMap,
        alpha_override: Option<f32>,
    ) -> Result<Self, ArithmeticError> {
        let meta = map.metadata();
        let parse_meta = |keys: &[&str]| -> Result<Option<f32>, ArithmeticError> {
            for key in keys {
                if let Some(v) = meta.get(*key) {
                    return v.trim().parse::<f32>().map(Some).map_err(|_| {
                        ArithmeticError::InvalidAdapter(format!(
                            "metadata `{key}`=`{v}` is not a number"
                        ))
                    });
                }
            }
            Ok(None)
        };
        let meta_alpha = parse_meta(&["lora_alpha", "alpha"])?;
        let meta_rank = parse_meta(&["r", "rank", "lora_rank"])?;

        let mut pairs: BTreeMap<String, (Option<&str>, Option<&str>)> = BTreeMap::new();
        let mut order = Vec::new();
        for name in map.names() {
            let Some((target, is_a)) = split_factor_name(name) else {
                return Err(ArithmeticError::InvalidAdapter(format!(
                    "tensor `{name}` is neither a lora_A nor a lora_B factor"
                )));
            };
            let slot = pairs.entry(target.clone()).or_insert_with(|| {
                order.push(target.clone());
                (None, None)
            });
            let field = if is_a { &mut slot.0 } else { &mut slot.1 };
            if field.replace(name).is_some() {
                return Err(ArithmeticError::InvalidAdapter(format!(
                    "duplicate factor for target `{target}`"
                )));
            }
        }

        let mut adapter = LoraAdapter::default();
        for target in order {
            let (Some(a_name), Some(b_name)) = pairs[&target] else {
                return Err(ArithmeticError::InvalidAdapter(format!(
                    "target `{target}` is missing its A or B factor"
                )));
            };
            let a_spec = map.spec(a_name).expect("listed name");
            let b_spec = map.spec(b_name).expect("listed name");
            let (&[rank, cols], &[rows, rank_b]) =
                (a_spec.shape.as_slice(), b_spec.shape.as_slice())
            else {
                return Err(ArithmeticError::InvalidAdapter(format!(
                    "factors of `{target}` must be 2-D, got A {:?} and B {:?}",
                    a_spec.shape, b_spec.shape
                )));
            };
            if rank != rank_b {
                return Err(ArithmeticError::InvalidAdapter(format!(
                    "`{target}`: A has {rank} rows but B has {rank_b} columns"
                )));
            }
            if let Some(r) = meta_rank {
                if r as usize != rank {
                    return Err(ArithmeticError::InvalidAdapter(format!(
                        "`{target}`: factor rank {rank} disagrees with metadata rank {r}"
                    )));
                }
            }
            let alpha = alpha_override.or(meta_alpha);
            let t = LoraTarget::new(
                rows,
                cols,
                rank,
                map.to_f32(b_name).expect("listed name"),
                map.to_f32(a_name).expect("listed name"),
                alpha,
            )?;
            adapter.insert(target, t);
        }
        Ok(adapter)
    }
}

fn split_factor_name(name: &str) -> Option<(String, bool)> {
    let stripped = name.strip_prefix(PEFT_PREFIX).unwrap_or(name);
    for (suffix, is_a) in [(".lora_A", true), (".lora_B", false)] {
        if let Some(stem) = stripped.strip_suffix(suffix) {
            return Some((stem.to_string(), is_a));
        }
        if let Some(stem) = stripped.strip_suffix(&format!("{suffix}.weight")) {
            return Some((format!("{stem}.weight"), is_a));
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeSummary {
    pub merged: Vec<String>,
    pub copied: usize,
}

/// Stream `base` with the adapter folded in. Untargeted tensors pass through
/// byte-for-byte.
pub fn merge_lora_into<S: TensorSink>(
    base: &NamedTensorMap,
    adapter: &LoraAdapter,
    sink: &mut S,
) -> Result<MergeSummary, ArithmeticError> {
    let mut targets: BTreeMap<&str, &LoraTarget> = BTreeMap::new();
    for (name, target) in &adapter.targets {
        let spec = base
            .spec(name)
            .ok_or_else(|| ArithmeticError::UnknownTarget(name.clone()))?;
        if spec.shape != [target.rows, target.cols] {
            return Err(ArithmeticError::ShapeMismatch {
                name: name.clone(),
                expected: spec.shape.clone(),
                found: vec![target.rows, target.cols],
            });
        }
        targets.insert(name, target);
    }

    let mut summary = MergeSummary::default();
    for spec in base.specs() {
        let bytes = base.tensor_bytes(spec);
        match targets.get(spec.name.as_str()) {
            Some(target) => {
                let merged = target.apply(&crate::checkpoint::widen(spec.dtype, bytes));
                sink.put(
                    &spec.name,
                    spec.dtype,
                    &spec.shape,
                    &narrow(spec.dtype, &merged),
                )?;
                tracing::debug!(tensor = %spec.name, rank = target.rank, "merged adapter");
                summary.merged.push(spec.name.clone());
            }
            None => {
                sink.put(&spec.name, spec.dtype, &spec.shape, bytes)?;
                summary.copied += 1;
            }
        }
    }
    Ok(summary)
}

/// In-memory [`merge_lora_into`]. Base metadata is carried over.
pub fn merge_lora(
    base: &NamedTensorMap,
    adapter: &LoraAdapter,
) -> Result<NamedTensorMap, ArithmeticError> {
    let mut builder = MapBuilder::default();
    builder.set_metadata(base.metadata().clone());
    merge_lora_into(base, adapter, &mut builder)?;
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::DType;

    #[test]
    fn identity_plus_rank_one_update() {
        let base = NamedTensorMap::builder()
            .with_f32("w", &[2, 2], &[1.0, 0.0, 0.0, 1.0])
            .build();
        let mut adapter = LoraAdapter::default();
        adapter.insert(
            "w",
            LoraTarget::new(2, 2, 1, vec![1.0, 0.0], vec![0.0, 2.0], Some(1.0)).unwrap(),
        );
        let out = merge_lora(&base, &adapter).unwrap();
        assert_eq!(out.to_f32("w").unwrap(), vec![1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_adapter_is_identity() {
        let mut b = NamedTensorMap::builder().metadata("k", "v");
        b.push_values("x", DType::BF16, &[3], &[1.5, -2.0, 0.25])
            .unwrap();
        let base = b.build();
        assert_eq!(merge_lora(&base, &LoraAdapter::default()).unwrap(), base);
    }

    #[test]
    fn unknown_target_is_refused() {
        let base = NamedTensorMap::builder()
            .with_f32("w", &[1, 1], &[0.0])
            .build();
        let mut adapter = LoraAdapter::default();
        adapter.insert(
            "nope",
            LoraTarget::new(1, 1, 1, vec![1.0], vec![1.0], None).unwrap(),
        );
        assert!(matches!(
            merge_lora(&base, &adapter),
            Err(ArithmeticError::UnknownTarget(n)) if n == "nope"
        ));
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let base = NamedTensorMap::builder()
            .with_f32("w", &[2, 3], &[0.0; 6])
            .build();
        let mut adapter = LoraAdapter::default();
        adapter.insert(
            "w",
            LoraTarget::new(3, 2, 1, vec![0.0; 3], vec![0.0; 2], None).unwrap(),
        );
        assert!(matches!(
            merge_lora(&base, &adapter),
            Err(ArithmeticError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rank_above_min_dim_is_invalid() {
        assert!(LoraTarget::new(2, 1, 2, vec![0.0; 4], vec![0.0; 2], None).is_err());
    }

    #[test]
    fn zero_alpha_is_identity() {
        let base = NamedTensorMap::builder()
            .with_f32("w", &[2, 2], &[1.0, 2.0, 3.0, 4.0])
            .build();
        let mut adapter = LoraAdapter::default();
        adapter.insert(
            "w",
            LoraTarget::new(2, 2, 1, vec![5.0, 6.0], vec![7.0, 8.0], Some(0.0)).unwrap(),
        );
        assert_eq!(merge_lora(&base, &adapter).unwrap(), base);
    }

    #[test]
    fn adapter_reads_factor_names_and_metadata() {
        let file = NamedTensorMap::builder()
            .metadata("lora_alpha", "2")
            .metadata("r", "1")
            .with_f32("layers.0.q.lora_A", &[1, 2], &[0.0, 2.0])
            .with_f32("layers.0.q.lora_B", &[2, 1], &[1.0, 0.0])
            .with_f32(
                "base_model.model.layers.1.v.lora_A.weight",
                &[1, 2],
                &[1.0, 1.0],
            )
            .with_f32(
                "base_model.model.layers.1.v.lora_B.weight",
                &[2, 1],
                &[1.0, 1.0],
            )
            .build();
        let adapter = LoraAdapter::from_checkpoint(&file, None).unwrap();
        let names: Vec<_> = adapter.targets.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["layers.0.q", "layers.1.v.weight"]);
        assert_eq!(adapter.targets[0].1.scale(), 2.0);
        let overridden = LoraAdapter::from_checkpoint(&file, Some(1.0)).unwrap();
        assert_eq!(overridden.targets[0].1.scale(), 1.0);
    }

    #[test]
    fn adapter_missing_factor_is_invalid() {
        let file = NamedTensorMap::builder()
            .with_f32("q.lora_A", &[1, 2], &[0.0, 2.0])
            .build();
        assert!(matches!(
            LoraAdapter::from_checkpoint(&file, None),
            Err(ArithmeticError::InvalidAdapter(_))
        ));
    }

    #[test]
    fn half_precision_base_is_merged_then_narrowed() {
        let mut b = NamedTensorMap::builder();
        b.push_values("w", DType::F16, &[1, 2], &[1.0, 1.0])
            .unwrap();
        b.push_values("untouched", DType::F16, &[1], &[3.0])
            .unwrap();
        let base = b.build();
        let mut adapter = LoraAdapter::default();
        adapter.insert(
            "w",
            LoraTarget::new(1, 2, 1, vec![0.5], vec![1.0, 2.0], None).unwrap(),
        );
        let out = merge_lora(&base, &adapter).unwrap();
        assert_eq!(out.spec("w").unwrap().dtype, DType::F16);
        assert_eq!(out.to_f32("w").unwrap(), vec![1.5, 2.0]);
        assert_eq!(out.bytes("untouched"), base.bytes("untouched"));
    }
}
