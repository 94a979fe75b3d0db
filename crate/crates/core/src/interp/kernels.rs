//! Per-op evaluation on concrete tensors.
//!
//! Reference semantics, pinned:
//! - float Div is IEEE division; integer Div truncates toward zero
//! - float Mod is `a - b * floor(a / b)` computed in exactly those f32 steps;
//!   integer Mod keeps the sign of the dividend (truncated division remainder)
//! - integer Div/Mod by zero and integer overflow raise [`RunError::Numeric`]
//! - ReduceSum and the Softmax normalizer accumulate in f64 and round the
//!   result back to f32
//! - MatMul, Einsum, and Conv2d accumulate f32 in index order, with the
//!   contracted axes iterated last-fastest

use std::collections::BTreeMap;

use crate::backend::f16::{f16_bits_from_f32, f32_from_f16_bits};
use crate::ir::shape::{normalize_axes, normalize_axis, parse_equation};
use crate::ir::{DType, Graph, Node, OpKind, ShapeMap, TensorData, TensorValue};

use super::RunError;

pub(crate) fn eval_node(
    g: &Graph,
    shapes: &ShapeMap,
    node: &Node,
    env: &BTreeMap<String, TensorValue>,
) -> Result<TensorValue, RunError> {
    let input = |i: usize| -> Result<&TensorValue, RunError> {
        env.get(&node.inputs[i]).ok_or_else(|| internal(node, "input tensor not materialized"))
    };
    match node.op {
        OpKind::Constant => {
            let name = node
                .attr_str("value")
                .ok_or_else(|| internal(node, "missing value attribute"))?;
            g.constants
                .get(name)
                .cloned()
                .ok_or_else(|| internal(node, "missing constant payload"))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Mod => {
            binary(node, input(0)?, input(1)?)
        }
        OpKind::Floor => unary_f32(node, input(0)?, f32::floor),
        OpKind::Exp => unary_f32(node, input(0)?, f32::exp),
        OpKind::Neg => match &input(0)?.data {
            TensorData::F32(x) => Ok(TensorValue::f32(
                input(0)?.shape.clone(),
                x.iter().map(|v| -v).collect(),
            )),
            TensorData::I64(x) => {
                let mut out = Vec::with_capacity(x.len());
                for v in x {
                    out.push(v.checked_neg().ok_or_else(|| numeric(node, "integer overflow"))?);
                }
                Ok(TensorValue::i64(input(0)?.shape.clone(), out))
            }
            _ => Err(internal(node, "unsupported dtype")),
        },
        OpKind::Relu => match &input(0)?.data {
            TensorData::F32(x) => Ok(TensorValue::f32(
                input(0)?.shape.clone(),
                x.iter().map(|v| v.max(0.0)).collect(),
            )),
            TensorData::I64(x) => Ok(TensorValue::i64(
                input(0)?.shape.clone(),
                x.iter().map(|v| (*v).max(0)).collect(),
            )),
            _ => Err(internal(node, "unsupported dtype")),
        },
        OpKind::Cast => {
            let to = node
                .attr_str("to")
                .and_then(DType::parse)
                .ok_or_else(|| internal(node, "missing target dtype"))?;
            Ok(cast(input(0)?, to))
        }
        OpKind::MatMul => matmul(node, input(0)?, input(1)?),
        OpKind::Einsum => einsum(node, input(0)?, input(1)?),
        OpKind::Transpose => {
            let perm: Vec<usize> = node
                .attr_ints("perm")
                .ok_or_else(|| internal(node, "missing perm"))?
                .iter()
                .map(|&p| p as usize)
                .collect();
            Ok(transpose(input(0)?, &perm))
        }
        OpKind::Reshape => {
            let out_shape = static_output_shape(shapes, node)?;
            let a = input(0)?;
            Ok(TensorValue { shape: out_shape, data: a.data.clone() })
        }
        OpKind::Concat => {
            let tensors: Vec<&TensorValue> = node
                .inputs
                .iter()
                .map(|n| env.get(n).ok_or_else(|| internal(node, "input tensor missing")))
                .collect::<Result<_, _>>()?;
            let axis = normalize_axis(node.attr_int("axis").unwrap_or(0), tensors[0].rank())
                .map_err(|e| internal(node, &e))?;
            Ok(concat(&tensors, axis))
        }
        OpKind::ReduceMax => reduce(node, input(0)?, Reduction::Max),
        OpKind::ReduceSum => reduce(node, input(0)?, Reduction::Sum),
        OpKind::Softmax => softmax(node, input(0)?),
        OpKind::MaxPool2d => maxpool(node, input(0)?, 2),
        OpKind::MaxPool3d => maxpool(node, input(0)?, 3),
        OpKind::Conv2d => conv2d(node, input(0)?, input(1)?),
    }
}

fn internal(node: &Node, msg: &str) -> RunError {
    RunError::Internal(format!("[{}] {msg}", node.id))
}

fn numeric(node: &Node, msg: &str) -> RunError {
    RunError::Numeric(format!("[{}] {msg}", node.id))
}

fn static_output_shape(shapes: &ShapeMap, node: &Node) -> Result<Vec<u64>, RunError> {
    shapes
        .get(&node.outputs[0])
        .and_then(|v| v.static_shape())
        .ok_or_else(|| internal(node, "output shape not statically known"))
}

/// Calls `f` for every multi-index of `dims` in row-major order.
fn for_each_index(dims: &[u64], mut f: impl FnMut(&[u64])) {
    if dims.iter().any(|&d| d == 0) {
        return;
    }
    let mut idx = vec![0u64; dims.len()];
    loop {
        f(&idx);
        let mut d = dims.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn row_major_strides(shape: &[u64]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1] as usize;
    }
    strides
}

fn broadcast_static(a: &[u64], b: &[u64]) -> Option<Vec<u64>> {
    let rank = a.len().max(b.len());
    let mut out = Vec::with_capacity(rank);
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        match (da, db) {
            (1, d) | (d, 1) => out.push(d),
            (x, y) if x == y => out.push(x),
            _ => return None,
        }
    }
    Some(out)
}

/// Right-aligned strides of `operand` viewed through the broadcast shape
/// `out`; broadcast axes get stride 0.
fn broadcast_strides(operand: &[u64], out: &[u64]) -> Vec<usize> {
    let own = row_major_strides(operand);
    let offset = out.len() - operand.len();
    (0..out.len())
        .map(|d| {
            if d < offset || operand[d - offset] == 1 {
                0
            } else {
                own[d - offset]
            }
        })
        .collect()
}

fn binary(node: &Node, a: &TensorValue, b: &TensorValue) -> Result<TensorValue, RunError> {
    let out_shape = broadcast_static(&a.shape, &b.shape)
        .ok_or_else(|| internal(node, "operands do not broadcast"))?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    match (&a.data, &b.data) {
        (TensorData::F32(x), TensorData::F32(y)) => {
            let f: fn(f32, f32) -> f32 = match node.op {
                OpKind::Add => |a, b| a + b,
                OpKind::Sub => |a, b| a - b,
                OpKind::Mul => |a, b| a * b,
                OpKind::Div => |a, b| a / b,
                OpKind::Mod => |a, b| {
                    let q = a / b;
                    let f = q.floor();
                    a - b * f
                },
                _ => unreachable!(),
            };
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            for_each_index(&out_shape, |idx| {
                let (mut ia, mut ib) = (0usize, 0usize);
                for (d, &i) in idx.iter().enumerate() {
                    ia += i as usize * sa[d];
                    ib += i as usize * sb[d];
                }
                out.push(f(x[ia], y[ib]));
            });
            Ok(TensorValue::f32(out_shape, out))
        }
        (TensorData::I64(x), TensorData::I64(y)) => {
            let f: fn(i64, i64) -> Option<i64> = match node.op {
                OpKind::Add => i64::checked_add,
                OpKind::Sub => i64::checked_sub,
                OpKind::Mul => i64::checked_mul,
                OpKind::Div => i64::checked_div,
                OpKind::Mod => i64::checked_rem,
                _ => unreachable!(),
            };
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            let mut failure: Option<RunError> = None;
            for_each_index(&out_shape, |idx| {
                if failure.is_some() {
                    return;
                }
                let (mut ia, mut ib) = (0usize, 0usize);
                for (d, &i) in idx.iter().enumerate() {
                    ia += i as usize * sa[d];
                    ib += i as usize * sb[d];
                }
                match f(x[ia], y[ib]) {
                    Some(v) => out.push(v),
                    None => {
                        let msg = if matches!(node.op, OpKind::Div | OpKind::Mod) && y[ib] == 0 {
                            "integer division by zero"
                        } else {
                            "integer overflow"
                        };
                        failure = Some(numeric(node, msg));
                    }
                }
            });
            match failure {
                Some(e) => Err(e),
                None => Ok(TensorValue::i64(out_shape, out)),
            }
        }
        _ => Err(internal(node, "unsupported operand dtypes")),
    }
}

fn unary_f32(node: &Node, a: &TensorValue, f: fn(f32) -> f32) -> Result<TensorValue, RunError> {
    match &a.data {
        TensorData::F32(x) => Ok(TensorValue::f32(a.shape.clone(), x.iter().map(|v| f(*v)).collect())),
        _ => Err(internal(node, "unsupported dtype")),
    }
}

fn cast(a: &TensorValue, to: DType) -> TensorValue {
    // Widen every source to f64 for floats and i128 for ints, then narrow
    // with saturation. Float to int truncates toward zero, NaN becomes 0.
    let shape = a.shape.clone();
    let as_f64: Vec<f64> = match &a.data {
        TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::F16(v) => v.iter().map(|&x| f32_from_f16_bits(x) as f64).collect(),
        TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I16(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I8(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
    };
    let is_float_src = a.dtype().is_float();
    let as_i128 = || -> Vec<i128> {
        match &a.data {
            TensorData::I64(v) => v.iter().map(|&x| x as i128).collect(),
            TensorData::I16(v) => v.iter().map(|&x| x as i128).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as i128).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as i128).collect(),
            // Saturating float to int conversion.
            TensorData::F32(v) => v.iter().map(|&x| x as i128).collect(),
            TensorData::F16(v) => v.iter().map(|&x| f32_from_f16_bits(x) as i128).collect(),
        }
    };
    let data = match to {
        DType::F32 => {
            if a.dtype() == DType::F32 {
                a.data.clone()
            } else {
                TensorData::F32(as_f64.iter().map(|&x| x as f32).collect())
            }
        }
        DType::F16 => match &a.data {
            TensorData::F16(v) => TensorData::F16(v.clone()),
            _ => TensorData::F16(as_f64.iter().map(|&x| f16_bits_from_f32(x as f32)).collect()),
        },
        DType::I64 => {
            if is_float_src {
                TensorData::I64(as_f64.iter().map(|&x| x as i64).collect())
            } else {
                TensorData::I64(as_i128().iter().map(|&x| x.clamp(i64::MIN as i128, i64::MAX as i128) as i64).collect())
            }
        }
        DType::I16 => TensorData::I16(
            as_i128().iter().map(|&x| x.clamp(i16::MIN as i128, i16::MAX as i128) as i16).collect(),
        ),
        DType::I8 => TensorData::I8(
            as_i128().iter().map(|&x| x.clamp(i8::MIN as i128, i8::MAX as i128) as i8).collect(),
        ),
        DType::U8 => TensorData::U8(
            as_i128().iter().map(|&x| x.clamp(0, u8::MAX as i128) as u8).collect(),
        ),
    };
    TensorValue { shape, data }
}

fn matmul(node: &Node, a: &TensorValue, b: &TensorValue) -> Result<TensorValue, RunError> {
    let (batch, m, k, n, out_shape) = match (a.shape.as_slice(), b.shape.as_slice()) {
        ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
        ([bz, m, k], [bz2, k2, n]) if bz == bz2 && k == k2 => {
            (*bz, *m, *k, *n, vec![*bz, *m, *n])
        }
        _ => return Err(internal(node, "operand shapes do not contract")),
    };
    let (batch, m, k, n) = (batch as usize, m as usize, k as usize, n as usize);
    match (&a.data, &b.data) {
        (TensorData::F32(x), TensorData::F32(y)) => {
            let mut out = vec![0.0f32; batch * m * n];
            for bi in 0..batch {
                for mi in 0..m {
                    for ni in 0..n {
                        let mut acc = 0.0f32;
                        for ki in 0..k {
                            acc += x[(bi * m + mi) * k + ki] * y[(bi * k + ki) * n + ni];
                        }
                        out[(bi * m + mi) * n + ni] = acc;
                    }
                }
            }
            Ok(TensorValue::f32(out_shape, out))
        }
        (TensorData::I64(x), TensorData::I64(y)) => {
            let mut out = vec![0i64; batch * m * n];
            for bi in 0..batch {
                for mi in 0..m {
                    for ni in 0..n {
                        let mut acc = 0i64;
                        for ki in 0..k {
                            let p = x[(bi * m + mi) * k + ki]
                                .checked_mul(y[(bi * k + ki) * n + ni])
                                .ok_or_else(|| numeric(node, "integer overflow"))?;
                            acc = acc
                                .checked_add(p)
                                .ok_or_else(|| numeric(node, "integer overflow"))?;
                        }
                        out[(bi * m + mi) * n + ni] = acc;
                    }
                }
            }
            Ok(TensorValue::i64(out_shape, out))
        }
        _ => Err(internal(node, "unsupported operand dtypes")),
    }
}

fn einsum(node: &Node, a: &TensorValue, b: &TensorValue) -> Result<TensorValue, RunError> {
    let eq = node.attr_str("equation").ok_or_else(|| internal(node, "missing equation"))?;
    let spec = parse_equation(eq).map_err(|e| internal(node, &e))?;
    let classes = spec.classify();

    let mut letter_dim: BTreeMap<char, u64> = BTreeMap::new();
    for (letters, operand) in [(&spec.lhs[0], a), (&spec.lhs[1], b)] {
        for (c, &d) in letters.iter().zip(&operand.shape) {
            letter_dim.insert(*c, d);
        }
    }
    let letter_strides = |letters: &[char], shape: &[u64]| -> BTreeMap<char, usize> {
        let strides = row_major_strides(shape);
        letters.iter().copied().zip(strides).collect()
    };
    let sa = letter_strides(&spec.lhs[0], &a.shape);
    let sb = letter_strides(&spec.lhs[1], &b.shape);

    let out_letters = &spec.rhs;
    let out_shape: Vec<u64> = out_letters.iter().map(|c| letter_dim[c]).collect();
    let con_dims: Vec<u64> = classes.contracted.iter().map(|c| letter_dim[c]).collect();
    let stride_of = |map: &BTreeMap<char, usize>, c: char| map.get(&c).copied().unwrap_or(0);
    let a_out: Vec<usize> = out_letters.iter().map(|&c| stride_of(&sa, c)).collect();
    let b_out: Vec<usize> = out_letters.iter().map(|&c| stride_of(&sb, c)).collect();
    let a_con: Vec<usize> = classes.contracted.iter().map(|&c| stride_of(&sa, c)).collect();
    let b_con: Vec<usize> = classes.contracted.iter().map(|&c| stride_of(&sb, c)).collect();

    match (&a.data, &b.data) {
        (TensorData::F32(x), TensorData::F32(y)) => {
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            for_each_index(&out_shape, |oi| {
                let base_a: usize = oi.iter().zip(&a_out).map(|(&i, &s)| i as usize * s).sum();
                let base_b: usize = oi.iter().zip(&b_out).map(|(&i, &s)| i as usize * s).sum();
                let mut acc = 0.0f32;
                for_each_index(&con_dims, |ci| {
                    let da: usize = ci.iter().zip(&a_con).map(|(&i, &s)| i as usize * s).sum();
                    let db: usize = ci.iter().zip(&b_con).map(|(&i, &s)| i as usize * s).sum();
                    acc += x[base_a + da] * y[base_b + db];
                });
                out.push(acc);
            });
            Ok(TensorValue::f32(out_shape, out))
        }
        (TensorData::I64(x), TensorData::I64(y)) => {
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            let mut failure = None;
            for_each_index(&out_shape, |oi| {
                if failure.is_some() {
                    return;
                }
                let base_a: usize = oi.iter().zip(&a_out).map(|(&i, &s)| i as usize * s).sum();
                let base_b: usize = oi.iter().zip(&b_out).map(|(&i, &s)| i as usize * s).sum();
                let mut acc = 0i64;
                for_each_index(&con_dims, |ci| {
                    if failure.is_some() {
                        return;
                    }
                    let da: usize = ci.iter().zip(&a_con).map(|(&i, &s)| i as usize * s).sum();
                    let db: usize = ci.iter().zip(&b_con).map(|(&i, &s)| i as usize * s).sum();
                    match x[base_a + da]
                        .checked_mul(y[base_b + db])
                        .and_then(|p| acc.checked_add(p))
                    {
                        Some(v) => acc = v,
                        None => failure = Some(numeric(node, "integer overflow")),
                    }
                });
                out.push(acc);
            });
            match failure {
                Some(e) => Err(e),
                None => Ok(TensorValue::i64(out_shape, out)),
            }
        }
        _ => Err(internal(node, "unsupported operand dtypes")),
    }
}

fn transpose(a: &TensorValue, perm: &[usize]) -> TensorValue {
    let out_shape: Vec<u64> = perm.iter().map(|&p| a.shape[p]).collect();
    let in_strides = row_major_strides(&a.shape);
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    macro_rules! permute {
        ($v:expr, $ctor:path) => {{
            let mut out = Vec::with_capacity($v.len());
            for_each_index(&out_shape, |idx| {
                let off: usize = idx.iter().zip(&mapped).map(|(&i, &s)| i as usize * s).sum();
                out.push($v[off]);
            });
            $ctor(out)
        }};
    }
    let data = match &a.data {
        TensorData::F32(v) => permute!(v, TensorData::F32),
        TensorData::F16(v) => permute!(v, TensorData::F16),
        TensorData::I64(v) => permute!(v, TensorData::I64),
        TensorData::I16(v) => permute!(v, TensorData::I16),
        TensorData::I8(v) => permute!(v, TensorData::I8),
        TensorData::U8(v) => permute!(v, TensorData::U8),
    };
    TensorValue { shape: out_shape, data }
}

fn concat(tensors: &[&TensorValue], axis: usize) -> TensorValue {
    let mut out_shape = tensors[0].shape.clone();
    out_shape[axis] = tensors.iter().map(|t| t.shape[axis]).sum();
    let outer: usize = tensors[0].shape[..axis].iter().product::<u64>() as usize;
    let inner: usize = tensors[0].shape[axis + 1..].iter().product::<u64>() as usize;
    macro_rules! interleave {
        ($variant:ident) => {{
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            for o in 0..outer {
                for t in tensors {
                    let TensorData::$variant(v) = &t.data else { unreachable!() };
                    let block = t.shape[axis] as usize * inner;
                    out.extend_from_slice(&v[o * block..(o + 1) * block]);
                }
            }
            TensorData::$variant(out)
        }};
    }
    let data = match &tensors[0].data {
        TensorData::F32(_) => interleave!(F32),
        TensorData::F16(_) => interleave!(F16),
        TensorData::I64(_) => interleave!(I64),
        TensorData::I16(_) => interleave!(I16),
        TensorData::I8(_) => interleave!(I8),
        TensorData::U8(_) => interleave!(U8),
    };
    TensorValue { shape: out_shape, data }
}

enum Reduction {
    Max,
    Sum,
}

fn reduce(node: &Node, a: &TensorValue, kind: Reduction) -> Result<TensorValue, RunError> {
    let rank = a.rank();
    let axes = normalize_axes(node.attr_ints("axes").unwrap_or(&[]), rank)
        .map_err(|e| internal(node, &e))?;
    let keepdims = node.attr_int("keepdims").unwrap_or(1) == 1;
    let mut out_shape = Vec::new();
    for (d, &extent) in a.shape.iter().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out_shape.push(1);
            }
        } else {
            out_shape.push(extent);
        }
    }
    let out_n = crate::ir::element_count(&out_shape) as usize;
    // Map an input multi-index to the flat output index.
    let out_strides = row_major_strides(&out_shape);
    let out_index = |idx: &[u64]| -> usize {
        let mut off = 0usize;
        let mut od = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            if axes.contains(&d) {
                if keepdims {
                    od += 1;
                }
            } else {
                off += i as usize * out_strides[od];
                od += 1;
            }
        }
        off
    };
    match (&a.data, kind) {
        (TensorData::F32(x), Reduction::Max) => {
            let mut out = vec![f32::NEG_INFINITY; out_n];
            let mut flat = 0usize;
            for_each_index(&a.shape, |idx| {
                let o = out_index(idx);
                out[o] = out[o].max(x[flat]);
                flat += 1;
            });
            Ok(TensorValue::f32(out_shape, out))
        }
        (TensorData::F32(x), Reduction::Sum) => {
            let mut acc = vec![0.0f64; out_n];
            let mut flat = 0usize;
            for_each_index(&a.shape, |idx| {
                acc[out_index(idx)] += x[flat] as f64;
                flat += 1;
            });
            Ok(TensorValue::f32(out_shape, acc.iter().map(|&v| v as f32).collect()))
        }
        (TensorData::I64(x), Reduction::Max) => {
            let mut out = vec![i64::MIN; out_n];
            let mut flat = 0usize;
            for_each_index(&a.shape, |idx| {
                let o = out_index(idx);
                out[o] = out[o].max(x[flat]);
                flat += 1;
            });
            Ok(TensorValue::i64(out_shape, out))
        }
        (TensorData::I64(x), Reduction::Sum) => {
            let mut acc = vec![0i64; out_n];
            let mut flat = 0usize;
            let mut failure = None;
            for_each_index(&a.shape, |idx| {
                if failure.is_some() {
                    return;
                }
                let o = out_index(idx);
                match acc[o].checked_add(x[flat]) {
                    Some(v) => acc[o] = v,
                    None => failure = Some(numeric(node, "integer overflow")),
                }
                flat += 1;
            });
            match failure {
                Some(e) => Err(e),
                None => Ok(TensorValue::i64(out_shape, acc)),
            }
        }
        _ => Err(internal(node, "unsupported dtype")),
    }
}

fn softmax(node: &Node, a: &TensorValue) -> Result<TensorValue, RunError> {
    let TensorData::F32(x) = &a.data else {
        return Err(internal(node, "unsupported dtype"));
    };
    let axis = normalize_axis(node.attr_int("axis").unwrap_or(-1), a.rank())
        .map_err(|e| internal(node, &e))?;
    let lane = a.shape[axis] as usize;
    let inner: usize = a.shape[axis + 1..].iter().product::<u64>() as usize;
    let outer: usize = a.shape[..axis].iter().product::<u64>() as usize;
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * lane + l) * inner + i;
            let mut m = f32::NEG_INFINITY;
            for l in 0..lane {
                m = m.max(x[at(l)]);
            }
            let mut sum = 0.0f64;
            let mut exps = vec![0.0f64; lane];
            for l in 0..lane {
                let e = (((x[at(l)] - m) as f64).exp()) as f64;
                exps[l] = e;
                sum += e;
            }
            for l in 0..lane {
                out[at(l)] = (exps[l] / sum) as f32;
            }
        }
    }
    Ok(TensorValue::f32(a.shape.clone(), out))
}

fn maxpool(node: &Node, a: &TensorValue, spatial: usize) -> Result<TensorValue, RunError> {
    let kernel = node.attr_ints("kernel").ok_or_else(|| internal(node, "missing kernel"))?;
    let stride = node.attr_ints("stride").ok_or_else(|| internal(node, "missing stride"))?;
    let default_pad = vec![0i64; spatial];
    let pad = node.attr_ints("pad").unwrap_or(&default_pad);
    let n = a.shape[0] as usize;
    let c = a.shape[1] as usize;
    let in_sp: Vec<i64> = a.shape[2..].iter().map(|&d| d as i64).collect();
    let out_sp: Vec<u64> = (0..spatial)
        .map(|d| ((in_sp[d] + 2 * pad[d] - kernel[d]) / stride[d] + 1) as u64)
        .collect();
    let mut out_shape = vec![a.shape[0], a.shape[1]];
    out_shape.extend(&out_sp);
    let in_strides = row_major_strides(&a.shape);
    let window: Vec<u64> = kernel.iter().map(|&k| k as u64).collect();

    macro_rules! pool {
        ($v:expr, $ctor:path, $min:expr) => {{
            let mut out = Vec::with_capacity(crate::ir::element_count(&out_shape) as usize);
            for ni in 0..n {
                for ci in 0..c {
                    let base = ni * in_strides[0] + ci * in_strides[1];
                    for_each_index(&out_sp, |oi| {
                        let mut best = $min;
                        for_each_index(&window, |ki| {
                            let mut off = base;
                            for d in 0..spatial {
                                let pos = oi[d] as i64 * stride[d] + ki[d] as i64 - pad[d];
                                if pos < 0 || pos >= in_sp[d] {
                                    return;
                                }
                                off += pos as usize * in_strides[2 + d];
                            }
                            let v = $v[off];
                            if v > best {
                                best = v;
                            }
                        });
                        out.push(best);
                    });
                }
            }
            $ctor(out)
        }};
    }
    let data = match &a.data {
        TensorData::F32(v) => pool!(v, TensorData::F32, f32::NEG_INFINITY),
        TensorData::I64(v) => pool!(v, TensorData::I64, i64::MIN),
        _ => return Err(internal(node, "unsupported dtype")),
    };
    Ok(TensorValue { shape: out_shape, data })
}

fn conv2d(node: &Node, x: &TensorValue, w: &TensorValue) -> Result<TensorValue, RunError> {
    let (TensorData::F32(xv), TensorData::F32(wv)) = (&x.data, &w.data) else {
        return Err(internal(node, "unsupported dtype"));
    };
    let stride = node.attr_ints("stride").unwrap_or(&[1, 1]);
    let pad = node.attr_ints("pad").unwrap_or(&[0, 0]);
    let [n, cin, h, wd] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]].map(|v| v as i64);
    let [co, _, kh, kw] = [w.shape[0], w.shape[1], w.shape[2], w.shape[3]].map(|v| v as i64);
    let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
    let ow = (wd + 2 * pad[1] - kw) / stride[1] + 1;
    let mut out = Vec::with_capacity((n * co * oh * ow) as usize);
    for ni in 0..n {
        for oi in 0..co {
            for hi in 0..oh {
                for wi in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..cin {
                        for khi in 0..kh {
                            for kwi in 0..kw {
                                let ih = hi * stride[0] + khi - pad[0];
                                let iw = wi * stride[1] + kwi - pad[1];
                                if ih < 0 || ih >= h || iw < 0 || iw >= wd {
                                    continue;
                                }
                                let xi = ((ni * cin + ci) * h + ih) * wd + iw;
                                let wi_ = ((oi * cin + ci) * kh + khi) * kw + kwi;
                                acc += xv[xi as usize] * wv[wi_ as usize];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(TensorValue::f32(
        vec![n as u64, co as u64, oh as u64, ow as u64],
        out,
    ))
}
