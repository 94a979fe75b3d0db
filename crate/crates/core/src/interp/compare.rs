//! Elementwise output comparison with mixed absolute and relative tolerance.

use serde::{Deserialize, Serialize};

use crate::backend::f16::f32_from_f16_bits;
use crate::ir::{TensorData, TensorValue};

use super::TensorMap;

/// An element passes when its absolute difference is within `atol`, or its
/// relative difference is within `rtol`. The relative denominator is
/// `max(|baseline|, denom_floor)` so comparisons near zero stay meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
    pub denom_floor: f64,
}

impl Tolerance {
    pub const DEFAULT: Tolerance = Tolerance { atol: 1e-5, rtol: 1e-4, denom_floor: 1e-6 };

    /// Zero tolerance: every element must match bit-for-bit in value.
    pub const EXACT: Tolerance = Tolerance { atol: 0.0, rtol: 0.0, denom_floor: 1e-6 };

    pub fn new(atol: f64, rtol: f64) -> Tolerance {
        Tolerance { atol, rtol, ..Tolerance::DEFAULT }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::DEFAULT
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputComparison {
    pub name: String,
    pub passed: bool,
    /// Elements compared; zero when the shapes or dtypes did not line up.
    pub compared: u64,
    pub failed: u64,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Description of the first failing element, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    /// Structural problem that prevented elementwise comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub passed: bool,
    pub tolerance: Tolerance,
    pub outputs: Vec<OutputComparison>,
}

impl AlignmentReport {
    pub fn worst_abs(&self) -> f64 {
        self.outputs.iter().map(|o| o.max_abs).fold(0.0, f64::max)
    }

    pub fn worst_rel(&self) -> f64 {
        self.outputs.iter().map(|o| o.max_rel).fold(0.0, f64::max)
    }
}

fn to_f64(data: &TensorData) -> Vec<f64> {
    match data {
        TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::F16(v) => v.iter().map(|&x| f32_from_f16_bits(x) as f64).collect(),
        TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I16(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I8(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
    }
}

fn structural_failure(name: &str, note: String) -> OutputComparison {
    OutputComparison {
        name: name.to_string(),
        passed: false,
        compared: 0,
        failed: 0,
        max_abs: 0.0,
        max_rel: 0.0,
        first_failure: None,
        note: Some(note),
    }
}

fn compare_one(name: &str, base: &TensorValue, cand: &TensorValue, tol: &Tolerance) -> OutputComparison {
    if base.dtype() != cand.dtype() {
        return structural_failure(
            name,
            format!("dtype mismatch: baseline {}, candidate {}", base.dtype(), cand.dtype()),
        );
    }
    if base.shape != cand.shape {
        return structural_failure(
            name,
            format!("shape mismatch: baseline {:?}, candidate {:?}", base.shape, cand.shape),
        );
    }
    let b = to_f64(&base.data);
    let c = to_f64(&cand.data);
    let mut failed = 0u64;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut first_failure = None;
    for (i, (&bv, &cv)) in b.iter().zip(&c).enumerate() {
        let abs = (bv - cv).abs();
        let rel = abs / bv.abs().max(tol.denom_floor);
        let ok = if bv.is_nan() || cv.is_nan() {
            false
        } else {
            abs <= tol.atol || rel <= tol.rtol
        };
        if abs.is_nan() {
            max_abs = f64::NAN;
            max_rel = f64::NAN;
        } else {
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        if !ok {
            failed += 1;
            if first_failure.is_none() {
                first_failure =
                    Some(format!("element {i}: baseline {bv}, candidate {cv}, abs {abs}, rel {rel}"));
            }
        }
    }
    OutputComparison {
        name: name.to_string(),
        passed: failed == 0,
        compared: b.len() as u64,
        failed,
        max_abs,
        max_rel,
        first_failure,
        note: None,
    }
}

/// Compares candidate outputs against baseline outputs.
///
/// Missing, extra, or structurally different outputs fail with a note rather
/// than panicking. The report passes only when every baseline output has a
/// matching candidate within tolerance and no extras exist.
pub fn compare(baseline: &TensorMap, candidate: &TensorMap, tol: &Tolerance) -> AlignmentReport {
    let mut outputs = Vec::new();
    for (name, base) in baseline {
        match candidate.get(name) {
            Some(cand) => outputs.push(compare_one(name, base, cand, tol)),
            None => outputs.push(structural_failure(name, "output missing from candidate".to_string())),
        }
    }
    for name in candidate.keys() {
        if !baseline.contains_key(name) {
            outputs.push(structural_failure(name, "output not present in baseline".to_string()));
        }
    }
    AlignmentReport { passed: outputs.iter().all(|o| o.passed), tolerance: *tol, outputs }
}
