//! Target capability profiles and graph compatibility checking.
//!
//! A profile is a data file describing what a deployment target accepts:
//! which ops, which dtypes, which precision modes, whether shapes must be
//! static, and per-op attribute constraints. [`check_compatibility`] walks a
//! graph against a profile and produces an ordered list of [`Diagnostic`]s;
//! an empty list means the graph can be compiled for that target.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::shape::{infer_shapes, ShapeError};
use crate::ir::{DType, DTypeClass, Graph, OpKind};

/// Numeric execution mode a target can be asked to build for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecisionMode {
    Fp16,
    W8A16,
    W8A8,
}

impl PrecisionMode {
    pub const ALL: [PrecisionMode; 3] = [PrecisionMode::Fp16, PrecisionMode::W8A16, PrecisionMode::W8A8];

    pub const fn as_str(self) -> &'static str {
        match self {
            PrecisionMode::Fp16 => "fp16",
            PrecisionMode::W8A16 => "w8a16",
            PrecisionMode::W8A8 => "w8a8",
        }
    }

    pub fn parse(s: &str) -> Option<PrecisionMode> {
        PrecisionMode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// True for modes that quantize weights and activations.
    pub const fn is_quantized(self) -> bool {
        matches!(self, PrecisionMode::W8A16 | PrecisionMode::W8A8)
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PrecisionMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PrecisionMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        PrecisionMode::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown precision mode {text}")))
    }
}

/// Constraint on an integer or integer-list attribute. List attributes are
/// checked elementwise.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrConstraint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eq: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
}

impl AttrConstraint {
    fn violation(&self, value: i64) -> Option<String> {
        if let Some(eq) = self.eq {
            if value != eq {
                return Some(format!("must equal {eq}, got {value}"));
            }
        }
        if let Some(min) = self.min {
            if value < min {
                return Some(format!("must be at least {min}, got {value}"));
            }
        }
        if let Some(max) = self.max {
            if value > max {
                return Some(format!("must be at most {max}, got {value}"));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub supported_ops: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub op_constraints: BTreeMap<String, BTreeMap<String, AttrConstraint>>,
    pub dtypes: Vec<DType>,
    pub requires_static_shapes: bool,
    pub precision_modes: Vec<PrecisionMode>,
    /// When set, graph surgery must leave the input and output signatures
    /// of the model untouched.
    #[serde(default)]
    pub preserve_io: bool,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to parse profile: {0}")]
    Parse(String),
    #[error("profile lists unknown op {0}")]
    UnknownOp(String),
    #[error("profile lists no dtypes")]
    NoDtypes,
    #[error("no built-in profile named {0} and no such file")]
    NotFound(String),
    #[error("failed to read profile file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const BUILTIN_PROFILES: [(&str, &str); 2] = [
    ("qnn-like", include_str!("../profiles/qnn-like.profile.json")),
    ("snpe-like", include_str!("../profiles/snpe-like.profile.json")),
];

impl Profile {
    pub fn from_json(text: &str) -> Result<Profile, ProfileError> {
        let profile: Profile =
            serde_json::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        for op in &profile.supported_ops {
            if OpKind::parse(op).is_none() {
                return Err(ProfileError::UnknownOp(op.clone()));
            }
        }
        for op in profile.op_constraints.keys() {
            if OpKind::parse(op).is_none() {
                return Err(ProfileError::UnknownOp(op.clone()));
            }
        }
        if profile.dtypes.is_empty() {
            return Err(ProfileError::NoDtypes);
        }
        Ok(profile)
    }

    pub fn builtin(name: &str) -> Option<Profile> {
        BUILTIN_PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Profile::from_json(text).expect("built-in profile parses"))
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN_PROFILES.iter().map(|(n, _)| *n).collect()
    }

    pub fn supports_op(&self, op: OpKind) -> bool {
        self.supported_ops.iter().any(|s| s == op.as_str())
    }

    pub fn supports_dtype(&self, dtype: DType) -> bool {
        self.dtypes.contains(&dtype)
    }

    pub fn supports_mode(&self, mode: PrecisionMode) -> bool {
        self.precision_modes.contains(&mode)
    }
}

/// Resolves a profile reference: a built-in name first, otherwise a path to
/// a profile JSON file.
pub fn resolve_profile(reference: &str) -> Result<Profile, ProfileError> {
    if let Some(profile) = Profile::builtin(reference) {
        return Ok(profile);
    }
    let path = Path::new(reference);
    if !path.exists() {
        return Err(ProfileError::NotFound(reference.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
        path: reference.to_string(),
        source: e,
    })?;
    Profile::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    UnsupportedOp,
    DynamicShape,
    UnsupportedDtype,
    UnsupportedAttribute,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticKind::UnsupportedOp => "UnsupportedOp",
            DiagnosticKind::DynamicShape => "DynamicShape",
            DiagnosticKind::UnsupportedDtype => "UnsupportedDtype",
            DiagnosticKind::UnsupportedAttribute => "UnsupportedAttribute",
        })
    }
}

/// One incompatibility between a graph and a profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Offending node id; absent for graph-level findings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtype_class: Option<DTypeClass>,
    pub detail: String,
}

impl Diagnostic {
    /// Stable key used to group equivalent failures, for repair planning and
    /// the knowledge base: `kind/op/dtype_class` with `-` for absent parts.
    pub fn signature(&self) -> String {
        format!(
            "{}/{}/{}",
            self.kind,
            self.op.as_deref().unwrap_or("-"),
            self.dtype_class.map(|c| c.to_string()).unwrap_or_else(|| "-".to_string())
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(node) = &self.node {
            write!(f, "[{node}] ")?;
        }
        self.kind.fmt(f)?;
        if let Some(op) = &self.op {
            write!(f, "({op})")?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Walks `graph` against `profile` and reports every incompatibility, in a
/// deterministic order: dynamic-shape findings over the declared inputs
/// first, then per-node findings in declaration order. A node whose op is
/// unsupported produces only that diagnostic; otherwise its dtype and
/// attributes are checked.
pub fn check_compatibility(graph: &Graph, profile: &Profile) -> Result<Vec<Diagnostic>, ShapeError> {
    let shapes = infer_shapes(graph)?;
    let mut diags = Vec::new();

    if profile.requires_static_shapes {
        for spec in &graph.inputs {
            for (i, dim) in spec.shape.iter().enumerate() {
                if let crate::ir::Dim::Symbolic(sym) = dim {
                    diags.push(Diagnostic {
                        kind: DiagnosticKind::DynamicShape,
                        node: None,
                        op: None,
                        dtype_class: None,
                        detail: format!(
                            "input {} dimension {} is symbolic ({}); the target requires static shapes",
                            spec.name, i, sym
                        ),
                    });
                }
            }
        }
    }

    for node in &graph.nodes {
        let class = node
            .inputs
            .first()
            .and_then(|name| shapes.get(name))
            .map(|info| info.dtype.class())
            .or_else(|| shapes.get(&node.outputs[0]).map(|info| info.dtype.class()));
        if !profile.supports_op(node.op) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::UnsupportedOp,
                node: Some(node.id.clone()),
                op: Some(node.op.as_str().to_string()),
                dtype_class: class,
                detail: format!("op {} is not supported by profile {}", node.op.as_str(), profile.name),
            });
            continue;
        }
        if let Some(info) = shapes.get(&node.outputs[0]) {
            if !profile.supports_dtype(info.dtype) {
                diags.push(Diagnostic {
                    kind: DiagnosticKind::UnsupportedDtype,
                    node: Some(node.id.clone()),
                    op: Some(node.op.as_str().to_string()),
                    dtype_class: Some(info.dtype.class()),
                    detail: format!(
                        "dtype {} is not supported by profile {}",
                        info.dtype, profile.name
                    ),
                });
            }
        }
        if let Some(constraints) = profile.op_constraints.get(node.op.as_str()) {
            for (attr, constraint) in constraints {
                let values: Vec<i64> = match node.attrs.get(attr) {
                    Some(crate::ir::AttrValue::Int(v)) => vec![*v],
                    Some(crate::ir::AttrValue::Ints(v)) => v.clone(),
                    _ => continue,
                };
                for value in values {
                    if let Some(problem) = constraint.violation(value) {
                        diags.push(Diagnostic {
                            kind: DiagnosticKind::UnsupportedAttribute,
                            node: Some(node.id.clone()),
                            op: Some(node.op.as_str().to_string()),
                            dtype_class: class,
                            detail: format!("attribute {attr} of {}: {problem}", node.op.as_str()),
                        });
                        break;
                    }
                }
            }
        }
    }
    Ok(diags)
}
