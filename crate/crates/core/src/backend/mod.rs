//! Target backend: compilation gating, compiled artifacts, and execution
//! under target numerics.
//!
//! The backend does not run on a real accelerator. It simulates one by
//! re-running the reference interpreter with a numeric [`Boundary`] that
//! mimics the target's precision: binary16 rounding for fp16 mode, fake
//! quantization for the quantized modes. Compilation is the gate: a graph
//! compiles only when the capability check is clean and the requested
//! precision mode is offered by the profile.

pub mod f16;
pub mod quant;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{check_compatibility, Diagnostic, PrecisionMode, Profile};
use crate::interp::{create_session, Boundary, RunError, SessionError, TensorMap};
use crate::ir::io::graph_sha256;
use crate::ir::shape::ShapeError;
use crate::ir::validate::validate_graph;
use crate::ir::Graph;
use quant::QuantParams;

/// Result of a successful compile. The artifact is a stand-in for a target
/// binary: it pins the exact graph by content hash, the profile and mode it
/// was built for, and the quantization parameters baked in (if any).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompiledArtifact {
    pub profile: String,
    pub mode: PrecisionMode,
    pub graph_sha256: String,
    /// Wall-clock build time, seconds since the Unix epoch.
    pub created_at: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quant_params: Option<BTreeMap<String, QuantParams>>,
}

pub const ARTIFACT_EXTENSION: &str = "ctxbin.json";

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("graph fails structural validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("graph is incompatible with profile {profile} ({} diagnostics)", diagnostics.len())]
    IncompatibleGraph { profile: String, diagnostics: Vec<Diagnostic> },
    #[error("profile {profile} does not support precision mode {mode}")]
    UnsupportedMode { profile: String, mode: PrecisionMode },
    #[error("precision mode {0} requires quantization parameters")]
    MissingQuantParams(PrecisionMode),
}

/// Compiles `graph` for `profile` under `mode`.
///
/// Quantized modes require calibration parameters; fp16 takes none.
pub fn compile(
    graph: &Graph,
    profile: &Profile,
    mode: PrecisionMode,
    quant_params: Option<&BTreeMap<String, QuantParams>>,
) -> Result<CompiledArtifact, CompileError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        let joined =
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(CompileError::Invalid(joined));
    }
    if !profile.supports_mode(mode) {
        return Err(CompileError::UnsupportedMode { profile: profile.name.clone(), mode });
    }
    let diagnostics = check_compatibility(graph, profile)?;
    if !diagnostics.is_empty() {
        return Err(CompileError::IncompatibleGraph {
            profile: profile.name.clone(),
            diagnostics,
        });
    }
    let quant_params = if mode.is_quantized() {
        match quant_params {
            Some(p) => Some(p.clone()),
            None => return Err(CompileError::MissingQuantParams(mode)),
        }
    } else {
        None
    };
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(CompiledArtifact {
        profile: profile.name.clone(),
        mode,
        graph_sha256: graph_sha256(graph),
        created_at,
        quant_params,
    })
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("artifact was compiled for graph {expected}, got graph {actual}")]
    ArtifactMismatch { expected: String, actual: String },
    #[error("artifact for mode {0} carries no quantization parameters")]
    MissingQuantParams(PrecisionMode),
}

/// Runs `graph` under binary16 boundary numerics.
pub fn run_fp16(graph: &Graph, feeds: &TensorMap) -> Result<TensorMap, ExecError> {
    let session = create_session(graph, Boundary::F16)?;
    Ok(session.run(feeds)?)
}

/// Runs `graph` under the fake-quantization boundary described by `params`.
pub fn run_quant(
    graph: &Graph,
    params: &BTreeMap<String, QuantParams>,
    feeds: &TensorMap,
) -> Result<TensorMap, ExecError> {
    let session = create_session(graph, Boundary::Quant(params.clone()))?;
    Ok(session.run(feeds)?)
}

/// Runs `graph` the way the target described by `artifact` would execute it.
/// The artifact must have been compiled from exactly this graph.
pub fn run_compiled(
    artifact: &CompiledArtifact,
    graph: &Graph,
    feeds: &TensorMap,
) -> Result<TensorMap, ExecError> {
    let actual = graph_sha256(graph);
    if artifact.graph_sha256 != actual {
        return Err(ExecError::ArtifactMismatch {
            expected: artifact.graph_sha256.clone(),
            actual,
        });
    }
    match artifact.mode {
        PrecisionMode::Fp16 => run_fp16(graph, feeds),
        PrecisionMode::W8A16 | PrecisionMode::W8A8 => {
            let params = artifact
                .quant_params
                .as_ref()
                .ok_or(ExecError::MissingQuantParams(artifact.mode))?;
            run_quant(graph, params, feeds)
        }
    }
}

#[derive(Debug, Error)]
pub enum ArtifactIoError {
    #[error("failed to access artifact {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse artifact {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub fn save_artifact(artifact: &CompiledArtifact, path: &Path) -> Result<(), ArtifactIoError> {
    let mut text = serde_json::to_string_pretty(artifact).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ArtifactIoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_artifact(path: &Path) -> Result<CompiledArtifact, ArtifactIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactIoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| ArtifactIoError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}
