use super::ArithmeticError;
use crate::checkpoint::{
    narrow, validate_alignment, widen, AlignmentReport, DType, MapBuilder, NamedTensorMap,
    TensorSink,
};
use serde::Serialize;

const KIND_KEY: &str = "esg_forge.kind";
const KIND_RESIDUAL: &str = "instruction_residual";

/// Elementwise `inst - base`, stored as `f32`.
#[derive(Debug, PartialEq)]
pub struct ResidualDelta {
    delta: NamedTensorMap,
}

impl ResidualDelta {
    /// Wrap a checkpoint read from disk. Non-`f32` tensors are accepted and
    /// widened on use.
    pub fn from_map(delta: NamedTensorMap) -> Self {
        Self { delta }
    }

    pub fn as_map(&self) -> &NamedTensorMap {
        &self.delta
    }

    pub fn into_map(self) -> NamedTensorMap {
        self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputDType {
    /// Keep each tensor's dtype from the model being adapted.
    #[default]
    MatchBase,
    Fixed(DType),
}

impl OutputDType {
    fn resolve(self, base: DType) -> DType {
        match self {
            OutputDType::MatchBase => base,
            OutputDType::Fixed(d) => d,
        }
    }
}

impl std::str::FromStr for OutputDType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("match") || s.eq_ignore_ascii_case("base") {
            Ok(OutputDType::MatchBase)
        } else {
            s.parse::<DType>().map(OutputDType::Fixed)
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IrmOptions {
    /// Skip tensors present on only one side instead of refusing.
    pub ignore_missing: bool,
    pub output_dtype: OutputDType,
    pub fail_on_nonfinite: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NonFiniteWarning {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IrmSummary {
    pub processed: usize,
    pub skipped: Vec<String>,
    pub copied: Vec<String>,
    pub non_finite: Vec<NonFiniteWarning>,
}

fn check_alignment(
    a: &NamedTensorMap,
    b: &NamedTensorMap,
    opts: &IrmOptions,
) -> Result<AlignmentReport, ArithmeticError> {
    let report = validate_alignment(a, b);
    let blocking = !report.shape_mismatches.is_empty()
        || (!opts.ignore_missing && !report.is_elementwise_compatible());
    if blocking {
        return Err(ArithmeticError::Alignment(report));
    }
    Ok(report)
}

/// Stream `inst - base` into `sink` as `f32` tensors in `base` storage order.
pub fn extract_residual_into<S: TensorSink>(
    inst: &NamedTensorMap,
    base: &NamedTensorMap,
    opts: &IrmOptions,
    sink: &mut S,
) -> Result<IrmSummary, ArithmeticError> {
    let report = check_alignment(inst, base, opts)?;
    let mut summary = IrmSummary::default();
    for name in report.only_in_a.iter().chain(&report.only_in_b) {
        tracing::warn!(tensor = %name, "present on one side only, skipped");
        summary.skipped.push(name.clone());
    }
    for spec in base.specs() {
        let Some(inst_spec) = inst.spec(&spec.name) else {
            continue;
        };
        let b = widen(spec.dtype, base.tensor_bytes(spec));
        let i = widen(inst_spec.dtype, inst.tensor_bytes(inst_spec));
        let delta: Vec<f32> = i.iter().zip(&b).map(|(x, y)| x - y).collect();
        sink.put(
            &spec.name,
            DType::F32,
            &spec.shape,
            &narrow(DType::F32, &delta),
        )?;
        summary.processed += 1;
    }
    Ok(summary)
}

/// Instruction residual `inst - base`, computed in `f32`.
pub fn extract_residual(
    inst: &NamedTensorMap,
    base: &NamedTensorMap,
    opts: &IrmOptions,
) -> Result<ResidualDelta, ArithmeticError> {
    let mut builder = MapBuilder::default().metadata(KIND_KEY, KIND_RESIDUAL);
    extract_residual_into(inst, base, opts, &mut builder)?;
    Ok(ResidualDelta {
        delta: builder.build(),
    })
}

/// Stream `base_adapted + delta` into `sink`, narrowed per `opts.output_dtype`.
pub fn apply_residual_into<S: TensorSink>(
    base_adapted: &NamedTensorMap,
    delta: &ResidualDelta,
    opts: &IrmOptions,
    sink: &mut S,
) -> Result<IrmSummary, ArithmeticError> {
    let delta = &delta.delta;
    let report = check_alignment(base_adapted, delta, opts)?;
    let mut summary = IrmSummary::default();
    for name in &report.only_in_b {
        tracing::warn!(tensor = %name, "residual tensor has no counterpart, skipped");
        summary.skipped.push(name.clone());
    }
    for spec in base_adapted.specs() {
        let out_dtype = opts.output_dtype.resolve(spec.dtype);
        let base_values = widen(spec.dtype, base_adapted.tensor_bytes(spec));
        let Some(delta_spec) = delta.spec(&spec.name) else {
            tracing::warn!(tensor = %spec.name, "no residual for tensor, copied");
            summary.copied.push(spec.name.clone());
            if out_dtype == spec.dtype {
                sink.put(
                    &spec.name,
                    spec.dtype,
                    &spec.shape,
                    base_adapted.tensor_bytes(spec),
                )?;
            } else {
                sink.put(
                    &spec.name,
                    out_dtype,
                    &spec.shape,
                    &narrow(out_dtype, &base_values),
                )?;
            }
            continue;
        };
        let d = widen(delta_spec.dtype, delta.tensor_bytes(delta_spec));
        let out: Vec<f32> = base_values.iter().zip(&d).map(|(x, y)| x + y).collect();
        let bytes = narrow(out_dtype, &out);
        // Narrowing can overflow to infinity, so count after it.
        let count = widen(out_dtype, &bytes)
            .iter()
            .filter(|v| !v.is_finite())
            .count();
        if count > 0 {
            if opts.fail_on_nonfinite {
                return Err(ArithmeticError::NonFinite {
                    name: spec.name.clone(),
                    count,
                });
            }
            tracing::warn!(tensor = %spec.name, count, "non-finite values in result");
            summary.non_finite.push(NonFiniteWarning {
                name: spec.name.clone(),
                count,
            });
        }
        sink.put(&spec.name, out_dtype, &spec.shape, &bytes)?;
        summary.processed += 1;
    }
    Ok(summary)
}

/// `base_adapted + delta`. Metadata of `base_adapted` is carried over.
pub fn apply_residual(
    base_adapted: &NamedTensorMap,
    delta: &ResidualDelta,
    opts: &IrmOptions,
) -> Result<(NamedTensorMap, IrmSummary), ArithmeticError> {
    let mut builder = MapBuilder::default();
    builder.set_metadata(base_adapted.metadata().clone());
    let summary = apply_residual_into(base_adapted, delta, opts, &mut builder)?;
    Ok((builder.build(), summary))
}
