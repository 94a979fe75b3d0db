//! In-memory graph representation: dtypes, shapes, nodes, tensor payloads.
//!
//! A [`Graph`] is a flat list of nodes in single-assignment form: every tensor
//! name is produced by exactly one node output (or is a graph input), and the
//! node list must be acyclic. Structural checking lives in [`validate`],
//! shape/dtype propagation in [`shape`], and the on-disk format in [`io`].

pub mod io;
pub mod shape;
pub mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Element types a tensor may carry.
///
/// Reference execution computes on `F32` and `I64`. The remaining types exist
/// for storage, `Cast`, and quantized artifacts; compute ops reject them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F32,
    F16,
    I64,
    I16,
    I8,
    U8,
}

/// Coarse dtype grouping used in diagnostics and failure signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DTypeClass {
    Float,
    Int,
}

impl DType {
    pub const ALL: [DType; 6] = [
        DType::F32,
        DType::F16,
        DType::I64,
        DType::I16,
        DType::I8,
        DType::U8,
    ];

    /// Size of one element in the serialized little-endian stream.
    pub const fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::I64 => 8,
            DType::I16 => 2,
            DType::I8 => 1,
            DType::U8 => 1,
        }
    }

    pub const fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F16)
    }

    pub const fn is_int(self) -> bool {
        !self.is_float()
    }

    pub const fn class(self) -> DTypeClass {
        if self.is_float() {
            DTypeClass::Float
        } else {
            DTypeClass::Int
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::I64 => "i64",
            DType::I16 => "i16",
            DType::I8 => "i8",
            DType::U8 => "u8",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        DType::ALL.iter().copied().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for DTypeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DTypeClass::Float => "float",
            DTypeClass::Int => "int",
        })
    }
}

impl Serialize for DTypeClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            DTypeClass::Float => "float",
            DTypeClass::Int => "int",
        })
    }
}

impl<'de> Deserialize<'de> for DTypeClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        match text.as_str() {
            "float" => Ok(DTypeClass::Float),
            "int" => Ok(DTypeClass::Int),
            other => Err(serde::de::Error::custom(format!("unknown dtype class {other}"))),
        }
    }
}

impl Serialize for DType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DType::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown dtype {s:?}")))
    }
}

/// One axis of a tensor shape: a fixed positive extent or a named placeholder
/// that must be bound before execution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dim {
    Static(u64),
    Symbolic(String),
}

impl Dim {
    pub fn as_static(&self) -> Option<u64> {
        match self {
            Dim::Static(n) => Some(*n),
            Dim::Symbolic(_) => None,
        }
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self, Dim::Symbolic(_))
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Static(n) => write!(f, "{n}"),
            Dim::Symbolic(s) => f.write_str(s),
        }
    }
}

/// Returns true if `name` is a valid identifier: `[A-Za-z_][A-Za-z0-9_]*`.
///
/// Tensor names, node ids, and symbolic dim names all follow this rule, which
/// also keeps constant blob filenames derived from tensor names safe.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Declared name, dtype, and shape of a graph input or output.
///
/// `range` is optional value-range metadata `[lo, hi]` on inputs. It drives
/// deterministic feed generation and supplies the facts rewrite guards need
/// (nonnegativity proofs for the Mod and Floor rewrites).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<Dim>,
    pub range: Option<(f64, f64)>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<Dim>) -> Self {
        TensorSpec {
            name: name.into(),
            dtype,
            shape,
            range: None,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some((lo, hi));
        self
    }

    /// All-static shape as plain extents, if no symbolic dims remain.
    pub fn static_shape(&self) -> Option<Vec<u64>> {
        self.shape.iter().map(Dim::as_static).collect()
    }
}

/// Shorthand for building an all-static shape.
pub fn dims(extents: &[u64]) -> Vec<Dim> {
    extents.iter().map(|&n| Dim::Static(n)).collect()
}

/// Inferred dtype and shape of one tensor, keyed by name in a [`ShapeMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueInfo {
    pub dtype: DType,
    pub shape: Vec<Dim>,
}

impl ValueInfo {
    pub fn static_shape(&self) -> Option<Vec<u64>> {
        self.shape.iter().map(Dim::as_static).collect()
    }
}

/// Inferred specs for every tensor in a graph, produced by
/// [`shape::infer_shapes`].
pub type ShapeMap = BTreeMap<String, ValueInfo>;

/// The fixed operator dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Floor,
    Neg,
    Relu,
    Exp,
    Cast,
    MatMul,
    Einsum,
    Transpose,
    Reshape,
    Concat,
    ReduceMax,
    ReduceSum,
    Softmax,
    MaxPool2d,
    MaxPool3d,
    Conv2d,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Constant,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Mod,
        OpKind::Floor,
        OpKind::Neg,
        OpKind::Relu,
        OpKind::Exp,
        OpKind::Cast,
        OpKind::MatMul,
        OpKind::Einsum,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::ReduceMax,
        OpKind::ReduceSum,
        OpKind::Softmax,
        OpKind::MaxPool2d,
        OpKind::MaxPool3d,
        OpKind::Conv2d,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            OpKind::Constant => "Constant",
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Div => "Div",
            OpKind::Mod => "Mod",
            OpKind::Floor => "Floor",
            OpKind::Neg => "Neg",
            OpKind::Relu => "Relu",
            OpKind::Exp => "Exp",
            OpKind::Cast => "Cast",
            OpKind::MatMul => "MatMul",
            OpKind::Einsum => "Einsum",
            OpKind::Transpose => "Transpose",
            OpKind::Reshape => "Reshape",
            OpKind::Concat => "Concat",
            OpKind::ReduceMax => "ReduceMax",
            OpKind::ReduceSum => "ReduceSum",
            OpKind::Softmax => "Softmax",
            OpKind::MaxPool2d => "MaxPool2d",
            OpKind::MaxPool3d => "MaxPool3d",
            OpKind::Conv2d => "Conv2d",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|o| o.as_str() == s)
    }

    /// Input arity bounds and output count. `max_inputs` of `None` means
    /// unbounded (Concat).
    pub fn arity(self) -> (usize, Option<usize>, usize) {
        match self {
            OpKind::Constant => (0, Some(0), 1),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Mod => {
                (2, Some(2), 1)
            }
            OpKind::Floor
            | OpKind::Neg
            | OpKind::Relu
            | OpKind::Exp
            | OpKind::Cast
            | OpKind::Transpose
            | OpKind::Reshape
            | OpKind::ReduceMax
            | OpKind::ReduceSum
            | OpKind::Softmax
            | OpKind::MaxPool2d
            | OpKind::MaxPool3d => (1, Some(1), 1),
            OpKind::MatMul | OpKind::Einsum | OpKind::Conv2d => (2, Some(2), 1),
            OpKind::Concat => (1, None, 1),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Node attribute value. Keys are unique per node (enforced by the map type).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Str(String),
    Ints(Vec<i64>),
}

impl AttrValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            AttrValue::Int(_) => "int",
            AttrValue::Float(_) => "float",
            AttrValue::Str(_) => "string",
            AttrValue::Ints(_) => "int list",
        }
    }
}

/// One operation instance in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attrs: BTreeMap<String, AttrValue>,
}

impl Node {
    pub fn new<S: Into<String>>(
        id: impl Into<String>,
        op: OpKind,
        inputs: impl IntoIterator<Item = S>,
        outputs: impl IntoIterator<Item = S>,
    ) -> Self {
        Node {
            id: id.into(),
            op,
            inputs: inputs.into_iter().map(Into::into).collect(),
            outputs: outputs.into_iter().map(Into::into).collect(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: AttrValue) -> Self {
        self.attrs.insert(key.into(), value);
        self
    }

    pub fn attr_int(&self, key: &str) -> Option<i64> {
        match self.attrs.get(key) {
            Some(AttrValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_float(&self, key: &str) -> Option<f64> {
        match self.attrs.get(key) {
            Some(AttrValue::Float(v)) => Some(*v),
            Some(AttrValue::Int(v)) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        match self.attrs.get(key) {
            Some(AttrValue::Str(v)) => Some(v),
            _ => None,
        }
    }

    pub fn attr_ints(&self, key: &str) -> Option<&[i64]> {
        match self.attrs.get(key) {
            Some(AttrValue::Ints(v)) => Some(v),
            _ => None,
        }
    }
}

/// Raw tensor payload. `F16` holds binary16 bit patterns.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<u16>),
    I64(Vec<i64>),
    I16(Vec<i16>),
    I8(Vec<i8>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
            TensorData::I64(_) => DType::I64,
            TensorData::I16(_) => DType::I16,
            TensorData::I8(_) => DType::I8,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::I16(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A concrete tensor: static shape plus a flat row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: Vec<u64>,
    pub data: TensorData,
}

/// Number of elements in a static shape (1 for rank 0).
pub fn element_count(shape: &[u64]) -> u64 {
    shape.iter().product()
}

impl TensorValue {
    pub fn new(shape: Vec<u64>, data: TensorData) -> Self {
        debug_assert_eq!(element_count(&shape) as usize, data.len());
        TensorValue { shape, data }
    }

    pub fn f32(shape: Vec<u64>, values: Vec<f32>) -> Self {
        TensorValue::new(shape, TensorData::F32(values))
    }

    pub fn i64(shape: Vec<u64>, values: Vec<i64>) -> Self {
        TensorValue::new(shape, TensorData::I64(values))
    }

    pub fn scalar_f32(v: f32) -> Self {
        TensorValue::f32(vec![], vec![v])
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            _ => None,
        }
    }

    /// Serializes the payload as a little-endian element stream.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.element_count() * self.dtype().size_bytes());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::F16(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::I16(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::I8(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::U8(v) => v.iter().for_each(|x| out.push(*x)),
        }
        out
    }

    /// Parses a little-endian element stream. The byte length must be exactly
    /// `element_count(shape) * dtype.size_bytes()`.
    pub fn from_le_bytes(dtype: DType, shape: Vec<u64>, bytes: &[u8]) -> Result<Self, String> {
        let count = element_count(&shape) as usize;
        let expected = count * dtype.size_bytes();
        if bytes.len() != expected {
            return Err(format!(
                "payload is {} bytes, expected {} ({} x {} elements)",
                bytes.len(),
                expected,
                dtype.size_bytes(),
                count
            ));
        }
        fn chunks<const N: usize, T>(bytes: &[u8], f: impl Fn([u8; N]) -> T) -> Vec<T> {
            bytes
                .chunks_exact(N)
                .map(|c| f(c.try_into().unwrap()))
                .collect()
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(chunks(bytes, f32::from_le_bytes)),
            DType::F16 => TensorData::F16(chunks(bytes, u16::from_le_bytes)),
            DType::I64 => TensorData::I64(chunks(bytes, i64::from_le_bytes)),
            DType::I16 => TensorData::I16(chunks(bytes, i16::from_le_bytes)),
            DType::I8 => TensorData::I8(chunks(bytes, i8::from_le_bytes)),
            DType::U8 => TensorData::U8(bytes.to_vec()),
        };
        Ok(TensorValue { shape, data })
    }
}

/// Input/output contract of a graph: `(name, dtype, shape)` triples in
/// declaration order. Rewrite passes must leave this untouched.
pub type IoSignature = (
    Vec<(String, DType, Vec<Dim>)>,
    Vec<(String, DType, Vec<Dim>)>,
);

/// A dataflow graph over the fixed dialect, in single-assignment form.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
    pub nodes: Vec<Node>,
    /// Payloads referenced by `Constant` nodes through their `value` attribute.
    pub constants: BTreeMap<String, TensorValue>,
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Graph {
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            nodes: Vec::new(),
            constants: BTreeMap::new(),
        }
    }

    /// Adds a `Constant` node producing `name` with the given payload.
    pub fn add_constant(&mut self, name: impl Into<String>, value: TensorValue) {
        let name = name.into();
        self.nodes.push(
            Node::new(
                format!("const_{name}"),
                OpKind::Constant,
                std::iter::empty::<&str>(),
                [name.as_str()],
            )
            .with_attr("value", AttrValue::Str(name.clone())),
        );
        self.constants.insert(name, value);
    }

    /// The node producing `tensor`, if any.
    pub fn producer_of(&self, tensor: &str) -> Option<&Node> {
        self.nodes
            .iter()
            .find(|n| n.outputs.iter().any(|o| o == tensor))
    }

    pub fn node_by_id(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Distinct symbolic dim names appearing anywhere in the declared specs.
    pub fn symbols(&self) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        for spec in self.inputs.iter().chain(self.outputs.iter()) {
            for d in &spec.shape {
                if let Dim::Symbolic(s) = d {
                    out.insert(s.clone());
                }
            }
        }
        out
    }

    /// The graph's external contract. Stable under every rewrite pass.
    pub fn io_signature(&self) -> IoSignature {
        let side = |specs: &[TensorSpec]| {
            specs
                .iter()
                .map(|s| (s.name.clone(), s.dtype, s.shape.clone()))
                .collect()
        };
        (side(&self.inputs), side(&self.outputs))
    }

    /// Every tensor name defined in the graph: inputs plus node outputs.
    pub fn defined_names(&self) -> std::collections::BTreeSet<&str> {
        let mut names: std::collections::BTreeSet<&str> =
            self.inputs.iter().map(|s| s.name.as_str()).collect();
        for n in &self.nodes {
            names.extend(n.outputs.iter().map(String::as_str));
        }
        names
    }

    /// Indices of `nodes` in a valid execution order, or the ids of nodes
    /// stuck in a cycle. Node order is preserved among ready nodes, so the
    /// result is deterministic.
    pub fn topo_order(&self) -> Result<Vec<usize>, Vec<String>> {
        let defined: std::collections::BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.outputs.iter().map(move |o| (o.as_str(), i)))
            .collect();
        let input_names: std::collections::BTreeSet<&str> =
            self.inputs.iter().map(|s| s.name.as_str()).collect();
        let mut placed = vec![false; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        loop {
            let mut progressed = false;
            for (i, node) in self.nodes.iter().enumerate() {
                if placed[i] {
                    continue;
                }
                let ready = node.inputs.iter().all(|inp| {
                    input_names.contains(inp.as_str())
                        || defined
                            .get(inp.as_str())
                            .map(|&j| placed[j])
                            .unwrap_or(true)
                });
                if ready {
                    placed[i] = true;
                    order.push(i);
                    progressed = true;
                }
            }
            if order.len() == self.nodes.len() {
                return Ok(order);
            }
            if !progressed {
                let stuck = self
                    .nodes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !placed[*i])
                    .map(|(_, n)| n.id.clone())
                    .collect();
                return Err(stuck);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtype_sizes_match_serialized_width() {
        assert_eq!(DType::F32.size_bytes(), 4);
        assert_eq!(DType::F16.size_bytes(), 2);
        assert_eq!(DType::I64.size_bytes(), 8);
        assert_eq!(DType::I16.size_bytes(), 2);
        assert_eq!(DType::I8.size_bytes(), 1);
        assert_eq!(DType::U8.size_bytes(), 1);
    }

    #[test]
    fn dtype_names_round_trip() {
        for d in DType::ALL {
            assert_eq!(DType::parse(d.as_str()), Some(d));
        }
        assert_eq!(DType::parse("f64"), None);
    }

    #[test]
    fn op_names_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(OpKind::parse(op.as_str()), Some(op));
        }
        assert_eq!(OpKind::ALL.len(), 22);
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("x"));
        assert!(is_identifier("_t0"));
        assert!(is_identifier("Batch_2"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("2x"));
        assert!(!is_identifier("a-b"));
        assert!(!is_identifier("a b"));
    }

    #[test]
    fn tensor_bytes_round_trip() {
        let t = TensorValue::f32(vec![2, 2], vec![1.0, -2.5, 3.25, 0.0]);
        let bytes = t.to_le_bytes();
        assert_eq!(bytes.len(), 16);
        let back = TensorValue::from_le_bytes(DType::F32, vec![2, 2], &bytes).unwrap();
        assert_eq!(back, t);

        let t = TensorValue::i64(vec![3], vec![-1, 0, i64::MAX]);
        let back = TensorValue::from_le_bytes(DType::I64, vec![3], &t.to_le_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tensor_bytes_length_mismatch_rejected() {
        let err = TensorValue::from_le_bytes(DType::F32, vec![2], &[0u8; 7]).unwrap_err();
        assert!(err.contains("7 bytes"));
    }

    #[test]
    fn rank_zero_tensor_has_one_element() {
        let t = TensorValue::scalar_f32(4.5);
        assert_eq!(t.element_count(), 1);
        assert_eq!(t.rank(), 0);
    }

    #[test]
    fn topo_order_is_deterministic_and_detects_cycles() {
        let mut g = Graph::new("t");
        g.inputs.push(TensorSpec::new("x", DType::F32, dims(&[2])));
        g.nodes.push(Node::new("n1", OpKind::Relu, ["x"], ["a"]));
        g.nodes.push(Node::new("n2", OpKind::Neg, ["a"], ["b"]));
        assert_eq!(g.topo_order().unwrap(), vec![0, 1]);

        // b -> c -> b is a cycle.
        let mut cyc = Graph::new("c");
        cyc.inputs.push(TensorSpec::new("x", DType::F32, dims(&[2])));
        cyc.nodes.push(Node::new("n1", OpKind::Add, ["x", "c"], ["b"]));
        cyc.nodes.push(Node::new("n2", OpKind::Relu, ["b"], ["c"]));
        let stuck = cyc.topo_order().unwrap_err();
        assert_eq!(stuck, vec!["n1".to_string(), "n2".to_string()]);
    }
}
