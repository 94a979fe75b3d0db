//! On-disk model format: a JSON document plus raw little-endian constant
//! blobs in a sibling data directory.
//!
//! The document layout is versioned (`format_version`), field order is fixed,
//! attribute maps and the constants table are name-sorted, and node, input,
//! and output order is preserved exactly. Serializing the same graph twice
//! therefore yields identical bytes, which is what makes content hashing and
//! byte-level baseline comparison meaningful.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{AttrValue, DType, Dim, Graph, Node, OpKind, TensorSpec, TensorValue};

/// Version written by this build and the only version it accepts.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    /// Malformed JSON, schema violation, unknown op or dtype string, or a
    /// blob whose byte length disagrees with its declared dtype and shape.
    #[error("ParseError: {0}")]
    Parse(String),
    /// The document declares a format version this build does not read.
    #[error("VersionError: document declares format_version {0}, this build reads {FORMAT_VERSION}")]
    Version(u64),
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDoc {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<Dim>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub op: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub attrs: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantDoc {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    /// Blob path relative to the document's directory, always with `/`
    /// separators. Absolute paths and `..` segments are rejected on load.
    pub file: String,
}

/// The JSON document half of a serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub format_version: u64,
    pub name: String,
    pub inputs: Vec<SpecDoc>,
    pub outputs: Vec<SpecDoc>,
    pub nodes: Vec<NodeDoc>,
    pub constants: Vec<ConstantDoc>,
}

impl fmt::Display for GraphDoc {
    /// Canonical document text: two-space pretty JSON plus a trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_string_pretty(self).map_err(|_| fmt::Error)?;
        writeln!(f, "{text}")
    }
}

/// Directory holding a model's constant blobs, derived from the graph name so
/// the layout is independent of where the document is written.
pub fn data_dir_name(graph_name: &str) -> String {
    format!("{graph_name}_data")
}

fn blob_rel_path(graph_name: &str, constant: &str) -> String {
    format!("{}/{constant}.bin", data_dir_name(graph_name))
}

/// Builds the serializable document for `g`. Constants are listed name-sorted
/// with their blob paths; payload bytes are returned separately in the same
/// order.
pub fn to_document(g: &Graph) -> (GraphDoc, Vec<(String, Vec<u8>)>) {
    let spec_doc = |s: &TensorSpec| SpecDoc {
        name: s.name.clone(),
        dtype: s.dtype,
        shape: s.shape.clone(),
        range: s.range.map(|(lo, hi)| [lo, hi]),
    };
    let doc = GraphDoc {
        format_version: FORMAT_VERSION,
        name: g.name.clone(),
        inputs: g.inputs.iter().map(spec_doc).collect(),
        outputs: g.outputs.iter().map(spec_doc).collect(),
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                op: n.op.as_str().to_string(),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                attrs: n.attrs.clone(),
            })
            .collect(),
        constants: g
            .constants
            .iter()
            .map(|(name, value)| ConstantDoc {
                name: name.clone(),
                dtype: value.dtype(),
                shape: value.shape.clone(),
                file: blob_rel_path(&g.name, name),
            })
            .collect(),
    };
    let blobs = g
        .constants
        .iter()
        .map(|(name, value)| (name.clone(), value.to_le_bytes()))
        .collect();
    (doc, blobs)
}

/// Reconstructs a graph from a document and its blob payloads (keyed by
/// constant name). Inverse of [`to_document`].
pub fn from_document(
    doc: &GraphDoc,
    blobs: &BTreeMap<String, Vec<u8>>,
) -> Result<Graph, LoadError> {
    if doc.format_version != FORMAT_VERSION {
        return Err(LoadError::Version(doc.format_version));
    }
    let spec = |s: &SpecDoc| TensorSpec {
        name: s.name.clone(),
        dtype: s.dtype,
        shape: s.shape.clone(),
        range: s.range.map(|[lo, hi]| (lo, hi)),
    };
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in &doc.nodes {
        let op = OpKind::parse(&n.op)
            .ok_or_else(|| LoadError::Parse(format!("node {:?}: unknown op {:?}", n.id, n.op)))?;
        nodes.push(Node {
            id: n.id.clone(),
            op,
            inputs: n.inputs.clone(),
            outputs: n.outputs.clone(),
            attrs: n.attrs.clone(),
        });
    }
    let mut constants = BTreeMap::new();
    for c in &doc.constants {
        let bytes = blobs.get(&c.name).ok_or_else(|| {
            LoadError::Parse(format!("constant {:?} has no payload bytes", c.name))
        })?;
        let value = TensorValue::from_le_bytes(c.dtype, c.shape.clone(), bytes)
            .map_err(|e| LoadError::Parse(format!("constant {:?}: {e}", c.name)))?;
        if constants.insert(c.name.clone(), value).is_some() {
            return Err(LoadError::Parse(format!("constant {:?} listed twice", c.name)));
        }
    }
    Ok(Graph {
        name: doc.name.clone(),
        inputs: doc.inputs.iter().map(spec).collect(),
        outputs: doc.outputs.iter().map(spec).collect(),
        nodes,
        constants,
    })
}

/// Parses document text. Syntax errors keep serde's line/column context;
/// an unsupported `format_version` is reported as such even when the rest of
/// the schema is unknown to this build.
pub fn parse_document(text: &str) -> Result<GraphDoc, LoadError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| LoadError::Parse(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| LoadError::Parse("missing integer field \"format_version\"".into()))?;
    if version != FORMAT_VERSION {
        return Err(LoadError::Version(version));
    }
    serde_json::from_value(value).map_err(|e| LoadError::Parse(e.to_string()))
}

/// Writes `g` as `path` plus a `<name>_data/` blob directory next to it.
/// The output is byte-deterministic; an existing data directory is replaced.
pub fn save_graph(g: &Graph, path: &Path) -> Result<(), LoadError> {
    let io_err = |path: &Path| {
        let p = path.to_path_buf();
        move |source: std::io::Error| LoadError::Io { path: p.clone(), source }
    };
    let (doc, blobs) = to_document(g);
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    let data_dir = parent.join(data_dir_name(&g.name));
    if data_dir.exists() {
        std::fs::remove_dir_all(&data_dir).map_err(io_err(&data_dir))?;
    }
    if !blobs.is_empty() {
        std::fs::create_dir_all(&data_dir).map_err(io_err(&data_dir))?;
    }
    for (name, bytes) in &blobs {
        let blob_path = data_dir.join(format!("{name}.bin"));
        std::fs::write(&blob_path, bytes).map_err(io_err(&blob_path))?;
    }
    std::fs::write(path, doc.to_string()).map_err(io_err(path))?;
    Ok(())
}

/// Loads a model document and its blobs. Blob paths must stay inside the
/// document's directory.
pub fn load_graph(path: &Path) -> Result<Graph, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc = parse_document(&text)?;
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let mut blobs = BTreeMap::new();
    for c in &doc.constants {
        let rel = Path::new(&c.file);
        let traversal = rel.is_absolute()
            || rel
                .components()
                .any(|comp| matches!(comp, std::path::Component::ParentDir));
        if traversal {
            return Err(LoadError::Parse(format!(
                "constant {:?} escapes the model directory: {:?}",
                c.name, c.file
            )));
        }
        let blob_path = parent.join(rel);
        let bytes = std::fs::read(&blob_path).map_err(|source| LoadError::Io {
            path: blob_path.clone(),
            source,
        })?;
        blobs.insert(c.name.clone(), bytes);
    }
    from_document(&doc, &blobs)
}

/// Canonical byte stream for hashing: the document text followed by every
/// blob in the document's (name-sorted) order. Blob lengths are fixed by the
/// document, so the concatenation is unambiguous.
pub fn canonical_bytes(g: &Graph) -> Vec<u8> {
    let (doc, blobs) = to_document(g);
    let mut bytes = doc.to_string().into_bytes();
    for (_, blob) in blobs {
        bytes.extend(blob);
    }
    bytes
}

/// Hex SHA-256 of [`canonical_bytes`]. This is the graph identity used for
/// baseline invalidation and compiled artifacts.
pub fn graph_sha256(g: &Graph) -> String {
    hex(&Sha256::digest(canonical_bytes(g)))
}

/// Hex SHA-256 of arbitrary bytes (report and baseline integrity checks).
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(digest: &[u8]) -> String {
    use std::fmt::Write as _;
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
