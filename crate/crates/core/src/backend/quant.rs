//! Post-training quantization: calibration, parameter derivation, and
//! fake-quant arithmetic.
//!
//! Parameters follow the usual affine model `real = (q - zero_point) * scale`.
//! Weights (graph constants) are quantized symmetrically to int8 over
//! [-127, 127]. Activations are quantized affinely from ranges observed on
//! calibration runs, widened to include zero so that zero stays exactly
//! representable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::PrecisionMode;
use crate::interp::{create_session, Boundary, RunError, SessionError, TensorMap};
use crate::ir::{DType, Graph, TensorData};

/// Smallest permitted scale; keeps constant-zero tensors dividable.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScheme {
    SymmetricI8,
    AffineU8,
    AffineI16,
}

impl QuantScheme {
    pub const fn qmin(self) -> i32 {
        match self {
            QuantScheme::SymmetricI8 => -127,
            QuantScheme::AffineU8 => 0,
            QuantScheme::AffineI16 => -32768,
        }
    }

    pub const fn qmax(self) -> i32 {
        match self {
            QuantScheme::SymmetricI8 => 127,
            QuantScheme::AffineU8 => 255,
            QuantScheme::AffineI16 => 32767,
        }
    }

    /// Number of quantization steps across the scheme's range.
    pub const fn steps(self) -> f64 {
        (self.qmax() - self.qmin()) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scheme: QuantScheme,
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    /// Quantize-dequantize round trip: `q = clamp(round(x / scale) + zp)`,
    /// then `(q - zp) * scale`. Rounding is half away from zero.
    pub fn fake_quant(&self, x: f32) -> f32 {
        let q = ((x as f64 / self.scale).round() + self.zero_point as f64)
            .clamp(self.scheme.qmin() as f64, self.scheme.qmax() as f64);
        ((q - self.zero_point as f64) * self.scale) as f32
    }
}

/// Symmetric int8 parameters for a weight tensor.
pub fn weight_params(values: &[f32]) -> QuantParams {
    let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    QuantParams {
        scheme: QuantScheme::SymmetricI8,
        scale: (max_abs / 127.0).max(SCALE_FLOOR),
        zero_point: 0,
    }
}

/// Affine parameters for an activation with observed range
/// `[observed_min, observed_max]`. The range is widened to include zero
/// before the scale is derived.
pub fn activation_params(scheme: QuantScheme, observed_min: f64, observed_max: f64) -> QuantParams {
    let rmin = observed_min.min(0.0);
    let rmax = observed_max.max(0.0);
    let scale = ((rmax - rmin) / scheme.steps()).max(SCALE_FLOOR);
    let zero_point = match scheme {
        QuantScheme::AffineU8 => (-rmin / scale).round() as i32,
        QuantScheme::AffineI16 => -32768 - (rmin / scale).round() as i32,
        QuantScheme::SymmetricI8 => 0,
    };
    QuantParams { scheme, scale, zero_point }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("precision mode {0} does not take calibration")]
    UnsupportedMode(PrecisionMode),
    #[error("calibration requires at least one feed set")]
    NoFeeds,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Run(#[from] RunError),
}

const fn activation_scheme(mode: PrecisionMode) -> Option<QuantScheme> {
    match mode {
        PrecisionMode::W8A8 => Some(QuantScheme::AffineU8),
        PrecisionMode::W8A16 => Some(QuantScheme::AffineI16),
        PrecisionMode::Fp16 => None,
    }
}

/// Runs the graph under reference numerics over every calibration feed set,
/// observing the value range of each f32 tensor, and derives per-tensor
/// parameters: symmetric int8 for constants, affine for everything else.
pub fn calibrate(
    graph: &Graph,
    mode: PrecisionMode,
    feed_sets: &[TensorMap],
) -> Result<BTreeMap<String, QuantParams>, CalibrationError> {
    let scheme = activation_scheme(mode).ok_or(CalibrationError::UnsupportedMode(mode))?;
    if feed_sets.is_empty() {
        return Err(CalibrationError::NoFeeds);
    }
    let session = create_session(graph, Boundary::Identity)?;
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for feeds in feed_sets {
        session.run_observed(feeds, &mut |name, value| {
            if let TensorData::F32(v) = &value.data {
                let entry = ranges
                    .entry(name.to_string())
                    .or_insert((f64::INFINITY, f64::NEG_INFINITY));
                for &x in v {
                    entry.0 = entry.0.min(x as f64);
                    entry.1 = entry.1.max(x as f64);
                }
            }
        })?;
    }
    let mut params = BTreeMap::new();
    for (name, (rmin, rmax)) in &ranges {
        let p = match graph.constants.get(name) {
            Some(c) if c.dtype() == DType::F32 => {
                let TensorData::F32(v) = &c.data else { unreachable!() };
                weight_params(v)
            }
            _ => activation_params(scheme, *rmin, *rmax),
        };
        params.insert(name.clone(), p);
    }
    Ok(params)
}
