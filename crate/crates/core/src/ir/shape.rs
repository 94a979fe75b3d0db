//! Shape and dtype propagation over a validated graph.
//!
//! Symbolic dims flow through ops that don't need arithmetic on them
//! (elementwise, transpose, reduce, matmul batch dims). Ops whose output
//! extent is computed from input extents (Reshape, Concat axis, pooling,
//! convolution spatial dims) require those extents to be static; there is no
//! symbolic arithmetic here beyond name equality.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{DType, Dim, Graph, Node, OpKind, ShapeMap, ValueInfo};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    /// Incompatible operand extents or dtypes.
    #[error("[{node}] ShapeMismatch: {detail}")]
    ShapeMismatch { node: String, detail: String },
    /// Reshape target cannot be resolved against the input element count.
    #[error("[{node}] UnresolvableReshape: {detail}")]
    UnresolvableReshape { node: String, detail: String },
    /// Einsum equation violates the supported grammar.
    #[error("[{node}] UnsupportedEquation: {detail}")]
    UnsupportedEquation { node: String, detail: String },
}

fn mismatch(node: &str, detail: impl Into<String>) -> ShapeError {
    ShapeError::ShapeMismatch {
        node: node.to_string(),
        detail: detail.into(),
    }
}

/// Dtypes a compute op accepts. Everything else must pass through Cast first.
const COMPUTE: [DType; 2] = [DType::F32, DType::I64];

/// Propagates specs for every tensor. Requires a structurally valid graph
/// (see [`super::validate::validate_graph`]); stops at the first error.
pub fn infer_shapes(g: &Graph) -> Result<ShapeMap, ShapeError> {
    let mut specs: ShapeMap = BTreeMap::new();
    for input in &g.inputs {
        specs.insert(
            input.name.clone(),
            ValueInfo {
                dtype: input.dtype,
                shape: input.shape.clone(),
            },
        );
    }
    let order = g
        .topo_order()
        .map_err(|stuck| mismatch(&stuck[0], "dependency cycle"))?;
    for idx in order {
        let node = &g.nodes[idx];
        let out = infer_node(g, node, &specs)?;
        specs.insert(node.outputs[0].clone(), out);
    }
    for declared in &g.outputs {
        let inferred = specs
            .get(&declared.name)
            .ok_or_else(|| mismatch("<graph>", format!("output {:?} missing", declared.name)))?;
        if inferred.dtype != declared.dtype {
            return Err(mismatch(
                "<graph>",
                format!(
                    "output {:?} declared {} but produces {}",
                    declared.name, declared.dtype, inferred.dtype
                ),
            ));
        }
        if inferred.shape != declared.shape {
            return Err(mismatch(
                "<graph>",
                format!(
                    "output {:?} declared shape {:?} but produces {:?}",
                    declared.name,
                    declared.shape.iter().map(Dim::to_string).collect::<Vec<_>>(),
                    inferred.shape.iter().map(Dim::to_string).collect::<Vec<_>>()
                ),
            ));
        }
    }
    Ok(specs)
}

fn infer_node(g: &Graph, node: &Node, specs: &ShapeMap) -> Result<ValueInfo, ShapeError> {
    let input = |i: usize| -> Result<&ValueInfo, ShapeError> {
        let name = &node.inputs[i];
        specs
            .get(name)
            .ok_or_else(|| mismatch(&node.id, format!("input {name:?} has no spec")))
    };
    let require_compute = |v: &ValueInfo, role: &str| -> Result<(), ShapeError> {
        if COMPUTE.contains(&v.dtype) {
            Ok(())
        } else {
            Err(mismatch(
                &node.id,
                format!("{} does not compute on {} ({role})", node.op, v.dtype),
            ))
        }
    };
    let require_float = |v: &ValueInfo| -> Result<(), ShapeError> {
        if v.dtype == DType::F32 {
            Ok(())
        } else {
            Err(mismatch(&node.id, format!("{} requires f32, got {}", node.op, v.dtype)))
        }
    };

    match node.op {
        OpKind::Constant => {
            let name = node
                .attr_str("value")
                .ok_or_else(|| mismatch(&node.id, "missing \"value\" attribute"))?;
            let payload = g
                .constants
                .get(name)
                .ok_or_else(|| mismatch(&node.id, format!("missing payload {name:?}")))?;
            Ok(ValueInfo {
                dtype: payload.dtype(),
                shape: payload.shape.iter().map(|&n| Dim::Static(n)).collect(),
            })
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Mod => {
            let (a, b) = (input(0)?, input(1)?);
            require_compute(a, "lhs")?;
            if a.dtype != b.dtype {
                return Err(mismatch(
                    &node.id,
                    format!("operand dtypes differ: {} vs {}", a.dtype, b.dtype),
                ));
            }
            let shape = broadcast(&a.shape, &b.shape)
                .map_err(|e| mismatch(&node.id, e))?;
            Ok(ValueInfo { dtype: a.dtype, shape })
        }
        OpKind::Floor | OpKind::Exp => {
            let a = input(0)?;
            require_float(a)?;
            Ok(a.clone())
        }
        OpKind::Neg | OpKind::Relu => {
            let a = input(0)?;
            require_compute(a, "operand")?;
            Ok(a.clone())
        }
        OpKind::Cast => {
            let a = input(0)?;
            let to = node
                .attr_str("to")
                .and_then(DType::parse)
                .ok_or_else(|| mismatch(&node.id, "missing or invalid \"to\" dtype"))?;
            Ok(ValueInfo { dtype: to, shape: a.shape.clone() })
        }
        OpKind::MatMul => infer_matmul(node, input(0)?, input(1)?),
        OpKind::Einsum => infer_einsum(node, input(0)?, input(1)?),
        OpKind::Transpose => {
            let a = input(0)?;
            let perm = node
                .attr_ints("perm")
                .ok_or_else(|| mismatch(&node.id, "missing \"perm\""))?;
            let rank = a.shape.len();
            let mut seen = vec![false; rank];
            if perm.len() != rank {
                return Err(mismatch(
                    &node.id,
                    format!("perm {perm:?} does not cover rank {rank}"),
                ));
            }
            for &p in perm {
                let valid = (0..rank as i64).contains(&p) && !seen[p as usize];
                if !valid {
                    return Err(mismatch(&node.id, format!("perm {perm:?} is not a permutation")));
                }
                seen[p as usize] = true;
            }
            let shape = perm.iter().map(|&p| a.shape[p as usize].clone()).collect();
            Ok(ValueInfo { dtype: a.dtype, shape })
        }
        OpKind::Reshape => infer_reshape(node, input(0)?),
        OpKind::Concat => infer_concat(node, specs),
        OpKind::ReduceMax | OpKind::ReduceSum => {
            let a = input(0)?;
            require_compute(a, "operand")?;
            let rank = a.shape.len();
            let axes = normalize_axes(
                node.attr_ints("axes").unwrap_or(&[]),
                rank,
            )
            .map_err(|e| mismatch(&node.id, e))?;
            let keepdims = node.attr_int("keepdims").unwrap_or(1) == 1;
            let mut shape = Vec::new();
            for (i, d) in a.shape.iter().enumerate() {
                if axes.contains(&i) {
                    if keepdims {
                        shape.push(Dim::Static(1));
                    }
                } else {
                    shape.push(d.clone());
                }
            }
            Ok(ValueInfo { dtype: a.dtype, shape })
        }
        OpKind::Softmax => {
            let a = input(0)?;
            require_float(a)?;
            let axis = node.attr_int("axis").unwrap_or(-1);
            normalize_axis(axis, a.shape.len()).map_err(|e| mismatch(&node.id, e))?;
            Ok(a.clone())
        }
        OpKind::MaxPool2d => infer_pool(node, input(0)?, 2),
        OpKind::MaxPool3d => infer_pool(node, input(0)?, 3),
        OpKind::Conv2d => infer_conv(node, input(0)?, input(1)?),
    }
}

/// Numpy-style multidirectional broadcast over possibly symbolic dims.
/// A symbolic dim only pairs with an equally named symbolic dim or a
/// literal 1; anything else is rejected rather than guessed.
pub fn broadcast(a: &[Dim], b: &[Dim]) -> Result<Vec<Dim>, String> {
    let rank = a.len().max(b.len());
    let mut out = Vec::with_capacity(rank);
    for i in 0..rank {
        let da = if i < rank - a.len() { &Dim::Static(1) } else { &a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { &Dim::Static(1) } else { &b[i - (rank - b.len())] };
        let d = match (da, db) {
            (Dim::Static(1), d) | (d, Dim::Static(1)) => d.clone(),
            (Dim::Static(x), Dim::Static(y)) if x == y => Dim::Static(*x),
            (Dim::Symbolic(x), Dim::Symbolic(y)) if x == y => Dim::Symbolic(x.clone()),
            _ => {
                return Err(format!("cannot broadcast dim {da} with {db}"));
            }
        };
        out.push(d);
    }
    Ok(out)
}

fn dims_equal(a: &Dim, b: &Dim) -> bool {
    a == b
}

fn infer_matmul(node: &Node, a: &ValueInfo, b: &ValueInfo) -> Result<ValueInfo, ShapeError> {
    if !COMPUTE.contains(&a.dtype) || a.dtype != b.dtype {
        return Err(mismatch(
            &node.id,
            format!("MatMul needs matching f32 or i64 operands, got {} and {}", a.dtype, b.dtype),
        ));
    }
    match (a.shape.len(), b.shape.len()) {
        (2, 2) => {
            if !dims_equal(&a.shape[1], &b.shape[0]) {
                return Err(mismatch(
                    &node.id,
                    format!("contraction dims differ: {} vs {}", a.shape[1], b.shape[0]),
                ));
            }
            Ok(ValueInfo {
                dtype: a.dtype,
                shape: vec![a.shape[0].clone(), b.shape[1].clone()],
            })
        }
        (3, 3) => {
            if !dims_equal(&a.shape[0], &b.shape[0]) {
                return Err(mismatch(
                    &node.id,
                    format!("batch dims differ: {} vs {}", a.shape[0], b.shape[0]),
                ));
            }
            if !dims_equal(&a.shape[2], &b.shape[1]) {
                return Err(mismatch(
                    &node.id,
                    format!("contraction dims differ: {} vs {}", a.shape[2], b.shape[1]),
                ));
            }
            Ok(ValueInfo {
                dtype: a.dtype,
                shape: vec![a.shape[0].clone(), a.shape[1].clone(), b.shape[2].clone()],
            })
        }
        (ra, rb) => Err(mismatch(
            &node.id,
            format!("MatMul supports rank 2x2 or 3x3, got {ra}x{rb}"),
        )),
    }
}

fn infer_reshape(node: &Node, a: &ValueInfo) -> Result<ValueInfo, ShapeError> {
    let target = node
        .attr_ints("shape")
        .ok_or_else(|| mismatch(&node.id, "missing \"shape\""))?;
    let unresolvable = |detail: String| ShapeError::UnresolvableReshape {
        node: node.id.clone(),
        detail,
    };
    let static_in: Option<Vec<u64>> = a.shape.iter().map(Dim::as_static).collect();
    let Some(static_in) = static_in else {
        return Err(unresolvable(
            "input has symbolic extents; bind shapes before reshaping".to_string(),
        ));
    };
    let total: u64 = static_in.iter().product();
    let known: u64 = target.iter().filter(|&&d| d != -1).map(|&d| d as u64).product();
    let wildcard = target.iter().position(|&d| d == -1);
    let mut out: Vec<u64> = Vec::with_capacity(target.len());
    match wildcard {
        Some(pos) => {
            if known == 0 || total % known != 0 {
                return Err(unresolvable(format!(
                    "cannot fill wildcard: {total} elements vs fixed factor {known}"
                )));
            }
            for (i, &d) in target.iter().enumerate() {
                out.push(if i == pos { total / known } else { d as u64 });
            }
        }
        None => {
            if known != total {
                return Err(mismatch(
                    &node.id,
                    format!("reshape target holds {known} elements, input has {total}"),
                ));
            }
            out.extend(target.iter().map(|&d| d as u64));
        }
    }
    Ok(ValueInfo {
        dtype: a.dtype,
        shape: out.into_iter().map(Dim::Static).collect(),
    })
}

fn infer_concat(node: &Node, specs: &ShapeMap) -> Result<ValueInfo, ShapeError> {
    let first = specs
        .get(&node.inputs[0])
        .ok_or_else(|| mismatch(&node.id, "input has no spec"))?;
    let rank = first.shape.len();
    let axis = normalize_axis(node.attr_int("axis").unwrap_or(0), rank)
        .map_err(|e| mismatch(&node.id, e))?;
    let mut axis_total: u64 = 0;
    let mut shape = first.shape.clone();
    for name in &node.inputs {
        let v = specs
            .get(name)
            .ok_or_else(|| mismatch(&node.id, format!("input {name:?} has no spec")))?;
        if v.dtype != first.dtype {
            return Err(mismatch(&node.id, "concat operands must share a dtype"));
        }
        if v.shape.len() != rank {
            return Err(mismatch(&node.id, "concat operands must share a rank"));
        }
        for (i, d) in v.shape.iter().enumerate() {
            if i == axis {
                match d.as_static() {
                    Some(n) => axis_total += n,
                    None => {
                        return Err(mismatch(
                            &node.id,
                            format!("concat axis extent must be static, got {d}"),
                        ))
                    }
                }
            } else if !dims_equal(d, &shape[i]) {
                return Err(mismatch(
                    &node.id,
                    format!("non-axis dim {i} differs: {} vs {}", shape[i], d),
                ));
            }
        }
    }
    shape[axis] = Dim::Static(axis_total);
    Ok(ValueInfo { dtype: first.dtype, shape })
}

fn infer_pool(node: &Node, a: &ValueInfo, spatial: usize) -> Result<ValueInfo, ShapeError> {
    if !COMPUTE.contains(&a.dtype) {
        return Err(mismatch(&node.id, format!("pooling does not compute on {}", a.dtype)));
    }
    let rank = spatial + 2;
    if a.shape.len() != rank {
        return Err(mismatch(
            &node.id,
            format!("{} expects rank {rank}, got {}", node.op, a.shape.len()),
        ));
    }
    let kernel = node.attr_ints("kernel").unwrap_or(&[]);
    let stride = node.attr_ints("stride").unwrap_or(&[]);
    let default_pad = vec![0i64; spatial];
    let pad = node.attr_ints("pad").unwrap_or(&default_pad);
    if kernel.len() != spatial || stride.len() != spatial || pad.len() != spatial {
        return Err(mismatch(&node.id, "kernel/stride/pad must match the spatial rank"));
    }
    let mut shape = vec![a.shape[0].clone(), a.shape[1].clone()];
    for i in 0..spatial {
        let extent = a.shape[2 + i].as_static().ok_or_else(|| {
            mismatch(&node.id, format!("spatial extent {} must be static", a.shape[2 + i]))
        })?;
        let padded = extent as i64 + 2 * pad[i];
        if padded < kernel[i] {
            return Err(mismatch(
                &node.id,
                format!("window {} exceeds padded extent {padded}", kernel[i]),
            ));
        }
        shape.push(Dim::Static(((padded - kernel[i]) / stride[i] + 1) as u64));
    }
    Ok(ValueInfo { dtype: a.dtype, shape })
}

fn infer_conv(node: &Node, x: &ValueInfo, w: &ValueInfo) -> Result<ValueInfo, ShapeError> {
    if x.dtype != DType::F32 || w.dtype != DType::F32 {
        return Err(mismatch(&node.id, "Conv2d requires f32 data and weights"));
    }
    if x.shape.len() != 4 || w.shape.len() != 4 {
        return Err(mismatch(&node.id, "Conv2d expects rank-4 data (NCHW) and weights (OIHW)"));
    }
    let stride = node.attr_ints("stride").unwrap_or(&[1, 1]);
    let pad = node.attr_ints("pad").unwrap_or(&[0, 0]);
    if !dims_equal(&x.shape[1], &w.shape[1]) {
        return Err(mismatch(
            &node.id,
            format!("channel dims differ: data {} vs weights {}", x.shape[1], w.shape[1]),
        ));
    }
    let mut shape = vec![x.shape[0].clone(), w.shape[0].clone()];
    for i in 0..2 {
        let extent = x.shape[2 + i].as_static().ok_or_else(|| {
            mismatch(&node.id, format!("spatial extent {} must be static", x.shape[2 + i]))
        })?;
        let k = w.shape[2 + i]
            .as_static()
            .ok_or_else(|| mismatch(&node.id, "kernel extents must be static"))?;
        let padded = extent as i64 + 2 * pad[i];
        if padded < k as i64 {
            return Err(mismatch(&node.id, format!("kernel {k} exceeds padded extent {padded}")));
        }
        shape.push(Dim::Static(((padded - k as i64) / stride[i] + 1) as u64));
    }
    Ok(ValueInfo { dtype: DType::F32, shape })
}

fn infer_einsum(node: &Node, a: &ValueInfo, b: &ValueInfo) -> Result<ValueInfo, ShapeError> {
    if !COMPUTE.contains(&a.dtype) || a.dtype != b.dtype {
        return Err(mismatch(
            &node.id,
            format!("Einsum needs matching f32 or i64 operands, got {} and {}", a.dtype, b.dtype),
        ));
    }
    let eq = node
        .attr_str("equation")
        .ok_or_else(|| mismatch(&node.id, "missing \"equation\""))?;
    let spec = parse_equation(eq).map_err(|detail| ShapeError::UnsupportedEquation {
        node: node.id.clone(),
        detail,
    })?;
    let mut bound: BTreeMap<char, Dim> = BTreeMap::new();
    for (letters, operand) in [(&spec.lhs[0], a), (&spec.lhs[1], b)] {
        if letters.len() != operand.shape.len() {
            return Err(mismatch(
                &node.id,
                format!(
                    "operand rank {} does not match {} subscript letters",
                    operand.shape.len(),
                    letters.len()
                ),
            ));
        }
        for (c, d) in letters.iter().zip(&operand.shape) {
            match bound.get(c) {
                Some(existing) if !dims_equal(existing, d) => {
                    return Err(mismatch(
                        &node.id,
                        format!("index {c:?} binds to both {existing} and {d}"),
                    ));
                }
                Some(_) => {}
                None => {
                    bound.insert(*c, d.clone());
                }
            }
        }
    }
    let shape = spec.rhs.iter().map(|c| bound[c].clone()).collect();
    Ok(ValueInfo { dtype: a.dtype, shape })
}

/// Parsed two-operand einsum equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EinsumSpec {
    pub lhs: [Vec<char>; 2],
    pub rhs: Vec<char>,
}

/// Index classification driving both execution and lowering. Letters keep
/// their order of first appearance in the left operand (free-right letters
/// follow the right operand).
#[derive(Debug, Clone, PartialEq)]
pub struct EinsumClasses {
    /// In both operands and the output.
    pub batch: Vec<char>,
    /// In both operands, absent from the output.
    pub contracted: Vec<char>,
    /// Left operand and output only.
    pub free_left: Vec<char>,
    /// Right operand and output only.
    pub free_right: Vec<char>,
}

impl EinsumSpec {
    pub fn classify(&self) -> EinsumClasses {
        let in_right = |c: &char| self.lhs[1].contains(c);
        let in_out = |c: &char| self.rhs.contains(c);
        EinsumClasses {
            batch: self.lhs[0].iter().copied().filter(|c| in_right(c) && in_out(c)).collect(),
            contracted: self.lhs[0].iter().copied().filter(|c| in_right(c) && !in_out(c)).collect(),
            free_left: self.lhs[0].iter().copied().filter(|c| !in_right(c)).collect(),
            free_right: self
                .lhs[1]
                .iter()
                .copied()
                .filter(|c| !self.lhs[0].contains(c))
                .collect(),
        }
    }
}

/// Parses and checks the supported einsum grammar: exactly two comma-separated
/// operand subscripts, an explicit `->` output, ASCII letters only, no repeats
/// within one operand (no diagonals), every index in at most two operands,
/// output indices drawn from the inputs, and no index confined to a single
/// operand without appearing in the output.
pub fn parse_equation(eq: &str) -> Result<EinsumSpec, String> {
    let compact: String = eq.chars().filter(|c| !c.is_whitespace()).collect();
    let (lhs, rhs) = compact
        .split_once("->")
        .ok_or_else(|| format!("equation {eq:?} lacks an explicit \"->\" output"))?;
    let operands: Vec<&str> = lhs.split(',').collect();
    if operands.len() != 2 {
        return Err(format!("expected two operands, got {}", operands.len()));
    }
    let parse_side = |s: &str, role: &str| -> Result<Vec<char>, String> {
        let letters: Vec<char> = s.chars().collect();
        for c in &letters {
            if !c.is_ascii_alphabetic() {
                return Err(format!("{role} subscript contains non-letter {c:?}"));
            }
        }
        Ok(letters)
    };
    let left = parse_side(operands[0], "left")?;
    let right = parse_side(operands[1], "right")?;
    let out = parse_side(rhs, "output")?;
    for (letters, role) in [(&left, "left"), (&right, "right"), (&out, "output")] {
        let mut seen = std::collections::BTreeSet::new();
        for c in letters.iter() {
            if !seen.insert(c) {
                return Err(format!("{role} subscript repeats index {c:?}"));
            }
        }
    }
    for c in &out {
        if !left.contains(c) && !right.contains(c) {
            return Err(format!("output index {c:?} appears in no operand"));
        }
    }
    for (letters, other) in [(&left, &right), (&right, &left)] {
        for c in letters.iter() {
            if !other.contains(c) && !out.contains(c) {
                return Err(format!(
                    "index {c:?} appears in one operand only and not in the output"
                ));
            }
        }
    }
    Ok(EinsumSpec { lhs: [left, right], rhs: out })
}

/// Resolves a possibly negative axis against `rank`.
pub fn normalize_axis(axis: i64, rank: usize) -> Result<usize, String> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    if (0..r).contains(&a) {
        Ok(a as usize)
    } else {
        Err(format!("axis {axis} out of range for rank {rank}"))
    }
}

/// Resolves an axis list; axes must be distinct after normalization.
pub fn normalize_axes(axes: &[i64], rank: usize) -> Result<Vec<usize>, String> {
    let mut out = Vec::with_capacity(axes.len());
    for &a in axes {
        let n = normalize_axis(a, rank)?;
        if out.contains(&n) {
            return Err(format!("axis {a} listed twice"));
        }
        out.push(n);
    }
    Ok(out)
}
