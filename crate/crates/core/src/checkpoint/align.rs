use super::{DType, NamedTensorMap};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub name: String,
    pub a_dtype: DType,
    pub a_shape: Vec<usize>,
    pub b_dtype: DType,
    pub b_shape: Vec<usize>,
}

/// Structural differences between two checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub shape_mismatches: Vec<Mismatch>,
    /// Same shape, different storage dtype. Arithmetic widens both sides, so
    /// these do not block elementwise operations.
    pub dtype_mismatches: Vec<Mismatch>,
}

impl AlignmentReport {
    pub fn is_empty(&self) -> bool {
        self.only_in_a.is_empty()
            && self.only_in_b.is_empty()
            && self.shape_mismatches.is_empty()
            && self.dtype_mismatches.is_empty()
    }

    /// True when every tensor pairs up with an equal shape.
    pub fn is_elementwise_compatible(&self) -> bool {
        self.only_in_a.is_empty() && self.only_in_b.is_empty() && self.shape_mismatches.is_empty()
    }

    pub fn swapped(&self) -> Self {
        let flip = |m: &Mismatch| Mismatch {
            name: m.name.clone(),
            a_dtype: m.b_dtype,
            a_shape: m.b_shape.clone(),
            b_dtype: m.a_dtype,
            b_shape: m.a_shape.clone(),
        };
        Self {
            only_in_a: self.only_in_b.clone(),
            only_in_b: self.only_in_a.clone(),
            shape_mismatches: self.shape_mismatches.iter().map(flip).collect(),
            dtype_mismatches: self.dtype_mismatches.iter().map(flip).collect(),
        }
    }
}

impl std::fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return f.write_str("aligned");
        }
        let mut parts = Vec::new();
        if !self.only_in_a.is_empty() {
            parts.push(format!("only in first: {}", self.only_in_a.join(", ")));
        }
        if !self.only_in_b.is_empty() {
            parts.push(format!("only in second: {}", self.only_in_b.join(", ")));
        }
        for m in &self.shape_mismatches {
            parts.push(format!(
                "shape {}: {:?} vs {:?}",
                m.name, m.a_shape, m.b_shape
            ));
        }
        for m in &self.dtype_mismatches {
            parts.push(format!("dtype {}: {} vs {}", m.name, m.a_dtype, m.b_dtype));
        }
        f.write_str(&parts.join("; "))
    }
}

/// Compare tensor names, shapes and dtypes. Lists follow each map's storage
/// order (mismatches in the order of `a`).
pub fn validate_alignment(a: &NamedTensorMap, b: &NamedTensorMap) -> AlignmentReport {
    let mut report = AlignmentReport::default();
    for sa in a.specs() {
        match b.spec(&sa.name) {
            None => report.only_in_a.push(sa.name.clone()),
            Some(sb) => {
                let m = Mismatch {
                    name: sa.name.clone(),
                    a_dtype: sa.dtype,
                    a_shape: sa.shape.clone(),
                    b_dtype: sb.dtype,
                    b_shape: sb.shape.clone(),
                };
                if sa.shape != sb.shape {
                    report.shape_mismatches.push(m);
                } else if sa.dtype != sb.dtype {
                    report.dtype_mismatches.push(m);
                }
            }
        }
    }
    report.only_in_b = b
        .names()
        .filter(|n| !a.contains(n))
        .map(str::to_string)
        .collect();
    report
}
