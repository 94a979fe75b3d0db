//! The reference interpreter checked against independently written oracles.
//!
//! Every oracle below is a direct transcription of the op's definition as
//! explicit nested loops over coordinates, with its own index arithmetic.
//! Nothing here shares broadcasting or striding helpers with the
//! interpreter, so agreement is evidence rather than tautology. Elementwise
//! and max-based ops must match bit for bit; ops that accumulate floats may
//! differ by summation order and get a 1e-6 relative allowance.

use std::collections::BTreeMap;

use portir_core::feedgen::{derive_seed, SplitMix64};
use portir_core::interp::{create_session, Boundary, RunError, Session, TensorMap};
use portir_core::ir::{dims, AttrValue, DType, Graph, Node, OpKind, TensorSpec, TensorValue};

const CASES: usize = 50;

fn seeded(stream: &str) -> SplitMix64 {
    SplitMix64::new(derive_seed(0x0AC1E, stream))
}

// ---------------------------------------------------------------------------
// Small harness: build a one-node graph, run it, hand back the one output.

fn run_node(node: Node, inputs: Vec<TensorSpec>, feeds: &TensorMap) -> TensorValue {
    try_run_node(node, inputs, feeds).expect("single-node graph runs")
}

fn try_run_node(
    node: Node,
    inputs: Vec<TensorSpec>,
    feeds: &TensorMap,
) -> Result<TensorValue, RunError> {
    let out_name = node.outputs[0].clone();
    let g = Graph {
        name: "oracle-case".to_string(),
        inputs,
        outputs: vec![],
        nodes: vec![node],
        constants: BTreeMap::new(),
    };
    OracleSession::new(g, out_name).run(feeds)
}

/// Sessions require declared outputs with exact dtype and shape; rather than
/// duplicating shape inference here, take the output spec from the graph's
/// own inference and declare it before running.
struct OracleSession {
    session: Session,
    out_name: String,
}

impl OracleSession {
    fn new(mut g: Graph, out_name: String) -> OracleSession {
        let specs = portir_core::ir::shape::infer_shapes(&g)
            .unwrap_or_else(|e| panic!("oracle graph must infer shapes: {e}"));
        let info = specs
            .get(&out_name)
            .unwrap_or_else(|| panic!("no inferred spec for {out_name}"));
        g.outputs
            .push(TensorSpec::new(out_name.clone(), info.dtype, info.shape.clone()));
        let session = create_session(&g, Boundary::Identity).expect("oracle graph is valid");
        OracleSession { session, out_name }
    }

    fn run(&self, feeds: &TensorMap) -> Result<TensorValue, RunError> {
        let mut out = self.session.run(feeds)?;
        Ok(out.swap_remove(&self.out_name).expect("declared output present"))
    }
}

fn feed(pairs: &[(&str, TensorValue)]) -> TensorMap {
    pairs.iter().map(|(n, v)| (n.to_string(), v.clone())).collect()
}

// ---------------------------------------------------------------------------
// Independent coordinate helpers (the oracle side).

/// Every coordinate of `shape` in row-major order, by odometer counting.
fn coords(shape: &[u64]) -> Vec<Vec<u64>> {
    let total: u64 = shape.iter().product();
    let mut all = Vec::with_capacity(total as usize);
    let mut cur = vec![0u64; shape.len()];
    for _ in 0..total {
        all.push(cur.clone());
        for d in (0..shape.len()).rev() {
            cur[d] += 1;
            if cur[d] < shape[d] {
                break;
            }
            cur[d] = 0;
        }
    }
    all
}

/// Row-major flat offset of `idx` in `shape`, computed right to left.
fn offset(shape: &[u64], idx: &[u64]) -> usize {
    let mut off = 0usize;
    let mut mult = 1usize;
    for d in (0..shape.len()).rev() {
        off += idx[d] as usize * mult;
        mult *= shape[d] as usize;
    }
    off
}

/// Numpy-style broadcast result shape.
fn bshape(a: &[u64], b: &[u64]) -> Vec<u64> {
    let rank = a.len().max(b.len());
    let mut out = vec![0u64; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        assert!(da == db || da == 1 || db == 1, "oracle case must broadcast");
        out[d] = da.max(db);
    }
    out
}

/// Element of `t` addressed by an output-space coordinate under broadcast.
fn bpick_f32(t: &TensorValue, out_idx: &[u64]) -> f32 {
    let v = t.as_f32().expect("f32 tensor");
    v[bcast_offset(&t.shape, out_idx)]
}

fn bpick_i64(t: &TensorValue, out_idx: &[u64]) -> i64 {
    let v = t.as_i64().expect("i64 tensor");
    v[bcast_offset(&t.shape, out_idx)]
}

fn bcast_offset(shape: &[u64], out_idx: &[u64]) -> usize {
    let skip = out_idx.len() - shape.len();
    let mut own_idx = Vec::with_capacity(shape.len());
    for d in 0..shape.len() {
        let i = out_idx[skip + d];
        own_idx.push(if shape[d] == 1 { 0 } else { i });
    }
    offset(shape, &own_idx)
}

// ---------------------------------------------------------------------------
// Random tensors.

fn rnd_shape(rng: &mut SplitMix64, max_rank: u64, max_dim: u64) -> Vec<u64> {
    let rank = rng.uniform_i64(1, max_rank as i64) as usize;
    (0..rank).map(|_| rng.uniform_i64(1, max_dim as i64) as u64).collect()
}

/// A shape that broadcasts against `full`: random dims squashed to one and
/// possibly fewer leading axes (always at least rank one).
fn rnd_mate(rng: &mut SplitMix64, full: &[u64]) -> Vec<u64> {
    let drop = rng.uniform_i64(0, full.len() as i64 - 1) as usize;
    let mut mate: Vec<u64> = full[drop..].to_vec();
    for d in mate.iter_mut() {
        if rng.next_f64() < 0.3 {
            *d = 1;
        }
    }
    mate
}

fn rnd_f32(rng: &mut SplitMix64, shape: &[u64], lo: f64, hi: f64) -> TensorValue {
    let count: u64 = shape.iter().product();
    let data = (0..count).map(|_| rng.uniform_f32(lo, hi)).collect();
    TensorValue::f32(shape.to_vec(), data)
}

fn rnd_i64(rng: &mut SplitMix64, shape: &[u64], lo: i64, hi: i64) -> TensorValue {
    let count: u64 = shape.iter().product();
    let data = (0..count).map(|_| rng.uniform_i64(lo, hi)).collect();
    TensorValue::i64(shape.to_vec(), data)
}

// ---------------------------------------------------------------------------
// Comparison.

fn assert_bits_f32(actual: &TensorValue, expected_shape: &[u64], expected: &[f32], what: &str) {
    assert_eq!(actual.shape, expected_shape, "{what}: shape");
    let got = actual.as_f32().expect("f32 output");
    assert_eq!(got.len(), expected.len(), "{what}: length");
    for (i, (g, e)) in got.iter().zip(expected).enumerate() {
        assert_eq!(g.to_bits(), e.to_bits(), "{what}: element {i}: got {g}, oracle {e}");
    }
}

fn assert_close_f32(actual: &TensorValue, expected_shape: &[u64], expected: &[f32], what: &str) {
    assert_eq!(actual.shape, expected_shape, "{what}: shape");
    let got = actual.as_f32().expect("f32 output");
    assert_eq!(got.len(), expected.len(), "{what}: length");
    for (i, (g, e)) in got.iter().zip(expected).enumerate() {
        let denom = e.abs().max(1e-6);
        let rel = (g - e).abs() / denom;
        assert!(rel <= 1e-6, "{what}: element {i}: got {g}, oracle {e}, rel {rel}");
    }
}

fn assert_i64(actual: &TensorValue, expected_shape: &[u64], expected: &[i64], what: &str) {
    assert_eq!(actual.shape, expected_shape, "{what}: shape");
    assert_eq!(actual.as_i64().expect("i64 output"), expected, "{what}");
}

// ---------------------------------------------------------------------------
// Elementwise binary ops under broadcasting.

fn check_binary_f32(op: OpKind, oracle: fn(f32, f32) -> f32, lo: f64, hi: f64, stream: &str) {
    let mut rng = seeded(stream);
    for case in 0..CASES {
        let sa = rnd_shape(&mut rng, 4, 5);
        let sb = rnd_mate(&mut rng, &sa);
        // Feed the broadcast-smaller operand on either side.
        let (sa, sb) = if case % 2 == 0 { (sa, sb) } else { (sb, sa) };
        let a = rnd_f32(&mut rng, &sa, lo, hi);
        let b = rnd_f32(&mut rng, &sb, lo, hi);
        let out_shape = bshape(&sa, &sb);
        let expected: Vec<f32> = coords(&out_shape)
            .iter()
            .map(|idx| oracle(bpick_f32(&a, idx), bpick_f32(&b, idx)))
            .collect();
        let got = run_node(
            Node::new("op", op, ["a", "b"], ["out"]),
            vec![
                TensorSpec::new("a", DType::F32, dims(&sa)),
                TensorSpec::new("b", DType::F32, dims(&sb)),
            ],
            &feed(&[("a", a), ("b", b)]),
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("{op:?} f32 case {case}"));
    }
}

fn check_binary_i64(op: OpKind, oracle: fn(i64, i64) -> i64, lo: i64, hi: i64, stream: &str) {
    let mut rng = seeded(stream);
    for case in 0..CASES {
        let sa = rnd_shape(&mut rng, 4, 5);
        let sb = rnd_mate(&mut rng, &sa);
        let a = rnd_i64(&mut rng, &sa, lo, hi);
        let mut b = rnd_i64(&mut rng, &sb, lo, hi);
        if matches!(op, OpKind::Div | OpKind::Mod) {
            // Zero divisors are a separate, pinned error case.
            if let Some(vals) = b.as_i64() {
                let fixed: Vec<i64> = vals.iter().map(|&v| if v == 0 { 1 } else { v }).collect();
                b = TensorValue::i64(sb.clone(), fixed);
            }
        }
        let out_shape = bshape(&sa, &sb);
        let expected: Vec<i64> = coords(&out_shape)
            .iter()
            .map(|idx| oracle(bpick_i64(&a, idx), bpick_i64(&b, idx)))
            .collect();
        let got = run_node(
            Node::new("op", op, ["a", "b"], ["out"]),
            vec![
                TensorSpec::new("a", DType::I64, dims(&sa)),
                TensorSpec::new("b", DType::I64, dims(&sb)),
            ],
            &feed(&[("a", a), ("b", b)]),
        );
        assert_i64(&got, &out_shape, &expected, &format!("{op:?} i64 case {case}"));
    }
}

#[test]
fn add_sub_mul_div_match_the_float_oracle() {
    check_binary_f32(OpKind::Add, |a, b| a + b, -10.0, 10.0, "add/f32");
    check_binary_f32(OpKind::Sub, |a, b| a - b, -10.0, 10.0, "sub/f32");
    check_binary_f32(OpKind::Mul, |a, b| a * b, -10.0, 10.0, "mul/f32");
    check_binary_f32(OpKind::Div, |a, b| a / b, 0.5, 10.0, "div/f32");
}

#[test]
fn float_mod_is_floored_remainder() {
    // a mod b = a - b*floor(a/b), the Python convention.
    check_binary_f32(OpKind::Mod, |a, b| a - b * (a / b).floor(), 1.0, 9.0, "mod/f32");
    check_binary_f32(OpKind::Mod, |a, b| a - b * (a / b).floor(), -9.0, -1.0, "mod/f32/neg");
}

#[test]
fn add_sub_mul_match_the_integer_oracle() {
    check_binary_i64(OpKind::Add, |a, b| a + b, -1000, 1000, "add/i64");
    check_binary_i64(OpKind::Sub, |a, b| a - b, -1000, 1000, "sub/i64");
    check_binary_i64(OpKind::Mul, |a, b| a * b, -1000, 1000, "mul/i64");
}

#[test]
fn integer_div_and_mod_truncate_toward_zero() {
    check_binary_i64(OpKind::Div, |a, b| a / b, -100, 100, "div/i64");
    check_binary_i64(OpKind::Mod, |a, b| a % b, -100, 100, "mod/i64");
}

#[test]
fn integer_mod_of_pinned_vector() {
    let got = run_node(
        Node::new("op", OpKind::Mod, ["a", "b"], ["out"]),
        vec![
            TensorSpec::new("a", DType::I64, dims(&[3])),
            TensorSpec::new("b", DType::I64, dims(&[3])),
        ],
        &feed(&[
            ("a", TensorValue::i64(vec![3], vec![7, 5, 3])),
            ("b", TensorValue::i64(vec![3], vec![3, 3, 3])),
        ]),
    );
    assert_i64(&got, &[3], &[1, 2, 0], "7,5,3 mod 3");
}

#[test]
fn integer_division_by_zero_is_a_numeric_error() {
    for op in [OpKind::Div, OpKind::Mod] {
        let err = try_run_node(
            Node::new("op", op, ["a", "b"], ["out"]),
            vec![
                TensorSpec::new("a", DType::I64, dims(&[2])),
                TensorSpec::new("b", DType::I64, dims(&[2])),
            ],
            &feed(&[
                ("a", TensorValue::i64(vec![2], vec![4, 7])),
                ("b", TensorValue::i64(vec![2], vec![2, 0])),
            ]),
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("division by zero"),
            "{op:?} by zero reported: {err}"
        );
    }
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

fn check_unary_f32(op: OpKind, oracle: fn(f32) -> f32, lo: f64, hi: f64, stream: &str) {
    let mut rng = seeded(stream);
    for case in 0..CASES {
        let shape = rnd_shape(&mut rng, 4, 6);
        let a = rnd_f32(&mut rng, &shape, lo, hi);
        let expected: Vec<f32> = a.as_f32().unwrap().iter().map(|&x| oracle(x)).collect();
        let got = run_node(
            Node::new("op", op, ["a"], ["out"]),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &shape, &expected, &format!("{op:?} case {case}"));
    }
}

#[test]
fn unary_float_ops_match_scalar_math() {
    check_unary_f32(OpKind::Floor, f32::floor, -20.0, 20.0, "floor");
    check_unary_f32(OpKind::Neg, |x| -x, -20.0, 20.0, "neg");
    check_unary_f32(OpKind::Relu, |x| if x > 0.0 { x } else { 0.0 }, -5.0, 5.0, "relu");
    check_unary_f32(OpKind::Exp, f32::exp, -4.0, 4.0, "exp");
}

#[test]
fn unary_integer_ops_match_scalar_math() {
    let mut rng = seeded("unary/i64");
    for _ in 0..CASES {
        let shape = rnd_shape(&mut rng, 3, 6);
        let a = rnd_i64(&mut rng, &shape, -50, 50);
        let vals = a.as_i64().unwrap().to_vec();
        let neg = run_node(
            Node::new("op", OpKind::Neg, ["a"], ["out"]),
            vec![TensorSpec::new("a", DType::I64, dims(&shape))],
            &feed(&[("a", a.clone())]),
        );
        assert_i64(&neg, &shape, &vals.iter().map(|&x| -x).collect::<Vec<_>>(), "neg i64");
        let relu = run_node(
            Node::new("op", OpKind::Relu, ["a"], ["out"]),
            vec![TensorSpec::new("a", DType::I64, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_i64(
            &relu,
            &shape,
            &vals.iter().map(|&x| x.max(0)).collect::<Vec<_>>(),
            "relu i64",
        );
    }
}

// ---------------------------------------------------------------------------
// Cast.

#[test]
fn cast_truncates_floats_and_widens_integers() {
    let mut rng = seeded("cast");
    for _ in 0..CASES {
        let shape = rnd_shape(&mut rng, 3, 5);
        let f = rnd_f32(&mut rng, &shape, -100.0, 100.0);
        let fv = f.as_f32().unwrap().to_vec();
        let got = run_node(
            Node::new("op", OpKind::Cast, ["a"], ["out"]).with_attr("to", AttrValue::Str("i64".into())),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", f)]),
        );
        assert_i64(
            &got,
            &shape,
            &fv.iter().map(|&x| x.trunc() as i64).collect::<Vec<_>>(),
            "cast f32 to i64 truncates toward zero",
        );

        let i = rnd_i64(&mut rng, &shape, -1000, 1000);
        let iv = i.as_i64().unwrap().to_vec();
        let got = run_node(
            Node::new("op", OpKind::Cast, ["a"], ["out"]).with_attr("to", AttrValue::Str("f32".into())),
            vec![TensorSpec::new("a", DType::I64, dims(&shape))],
            &feed(&[("a", i)]),
        );
        let expected: Vec<f32> = iv.iter().map(|&x| x as f32).collect();
        assert_bits_f32(&got, &shape, &expected, "cast i64 to f32");
    }
}

// ---------------------------------------------------------------------------
// MatMul.

#[test]
fn matmul_matches_the_triple_loop_oracle() {
    let mut rng = seeded("matmul");
    for case in 0..CASES {
        let batched = case % 2 == 1;
        let (bz, m, k, n) = (
            rng.uniform_i64(1, 3) as u64,
            rng.uniform_i64(1, 6) as u64,
            rng.uniform_i64(1, 6) as u64,
            rng.uniform_i64(1, 6) as u64,
        );
        let (sa, sb, so) = if batched {
            (vec![bz, m, k], vec![bz, k, n], vec![bz, m, n])
        } else {
            (vec![m, k], vec![k, n], vec![m, n])
        };
        let a = rnd_f32(&mut rng, &sa, -2.0, 2.0);
        let b = rnd_f32(&mut rng, &sb, -2.0, 2.0);
        let av = a.as_f32().unwrap();
        let bv = b.as_f32().unwrap();
        let mut expected = Vec::new();
        for bi in 0..if batched { bz } else { 1 } {
            for mi in 0..m {
                for ni in 0..n {
                    let mut acc = 0.0f32;
                    for ki in 0..k {
                        let ai = if batched {
                            offset(&sa, &[bi, mi, ki])
                        } else {
                            offset(&sa, &[mi, ki])
                        };
                        let bi_ = if batched {
                            offset(&sb, &[bi, ki, ni])
                        } else {
                            offset(&sb, &[ki, ni])
                        };
                        acc += av[ai] * bv[bi_];
                    }
                    expected.push(acc);
                }
            }
        }
        let got = run_node(
            Node::new("op", OpKind::MatMul, ["a", "b"], ["out"]),
            vec![
                TensorSpec::new("a", DType::F32, dims(&sa)),
                TensorSpec::new("b", DType::F32, dims(&sb)),
            ],
            &feed(&[("a", a), ("b", b)]),
        );
        assert_close_f32(&got, &so, &expected, &format!("matmul case {case}"));
    }
}

// ---------------------------------------------------------------------------
// Einsum.

#[test]
fn einsum_ij_jk_matches_the_nested_loop_oracle() {
    let mut rng = seeded("einsum/ijjk");
    for case in 0..CASES {
        let (i, j, k) = (
            rng.uniform_i64(1, 5) as u64,
            rng.uniform_i64(1, 5) as u64,
            rng.uniform_i64(1, 5) as u64,
        );
        let a = rnd_f32(&mut rng, &[i, j], -2.0, 2.0);
        let b = rnd_f32(&mut rng, &[j, k], -2.0, 2.0);
        let av = a.as_f32().unwrap();
        let bv = b.as_f32().unwrap();
        let mut expected = Vec::new();
        for ii in 0..i {
            for kk in 0..k {
                let mut acc = 0.0f32;
                for jj in 0..j {
                    acc += av[(ii * j + jj) as usize] * bv[(jj * k + kk) as usize];
                }
                expected.push(acc);
            }
        }
        let got = run_node(
            Node::new("op", OpKind::Einsum, ["a", "b"], ["out"])
                .with_attr("equation", AttrValue::Str("ij,jk->ik".into())),
            vec![
                TensorSpec::new("a", DType::F32, dims(&[i, j])),
                TensorSpec::new("b", DType::F32, dims(&[j, k])),
            ],
            &feed(&[("a", a), ("b", b)]),
        );
        assert_close_f32(&got, &[i, k], &expected, &format!("einsum ij,jk case {case}"));
    }
}

#[test]
fn batched_einsum_matches_the_nested_loop_oracle() {
    let mut rng = seeded("einsum/bqckc");
    for case in 0..CASES {
        let (b, q, kdim, c) = (
            rng.uniform_i64(1, 3) as u64,
            rng.uniform_i64(1, 4) as u64,
            rng.uniform_i64(1, 4) as u64,
            rng.uniform_i64(1, 4) as u64,
        );
        let qs = rnd_f32(&mut rng, &[b, q, c], -2.0, 2.0);
        let ks = rnd_f32(&mut rng, &[b, kdim, c], -2.0, 2.0);
        let qv = qs.as_f32().unwrap();
        let kv = ks.as_f32().unwrap();
        let mut expected = Vec::new();
        for bb in 0..b {
            for qq in 0..q {
                for kk in 0..kdim {
                    let mut acc = 0.0f32;
                    for cc in 0..c {
                        acc += qv[((bb * q + qq) * c + cc) as usize]
                            * kv[((bb * kdim + kk) * c + cc) as usize];
                    }
                    expected.push(acc);
                }
            }
        }
        let got = run_node(
            Node::new("op", OpKind::Einsum, ["a", "b"], ["out"])
                .with_attr("equation", AttrValue::Str("bqc,bkc->bqk".into())),
            vec![
                TensorSpec::new("a", DType::F32, dims(&[b, q, c])),
                TensorSpec::new("b", DType::F32, dims(&[b, kdim, c])),
            ],
            &feed(&[("a", qs), ("b", ks)]),
        );
        assert_close_f32(&got, &[b, q, kdim], &expected, &format!("einsum bqc,bkc case {case}"));
    }
}

// ---------------------------------------------------------------------------
// Layout ops.

#[test]
fn transpose_matches_the_coordinate_oracle() {
    let mut rng = seeded("transpose");
    for case in 0..CASES {
        let shape = rnd_shape(&mut rng, 4, 5);
        // Random permutation by repeated draws.
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.uniform_i64(0, i as i64) as usize;
            perm.swap(i, j);
        }
        let a = rnd_f32(&mut rng, &shape, -5.0, 5.0);
        let av = a.as_f32().unwrap().to_vec();
        let out_shape: Vec<u64> = perm.iter().map(|&p| shape[p]).collect();
        let mut expected = vec![0.0f32; av.len()];
        for idx in coords(&out_shape) {
            let mut src = vec![0u64; shape.len()];
            for (d, &p) in perm.iter().enumerate() {
                src[p] = idx[d];
            }
            expected[offset(&out_shape, &idx)] = av[offset(&shape, &src)];
        }
        let got = run_node(
            Node::new("op", OpKind::Transpose, ["a"], ["out"])
                .with_attr("perm", AttrValue::Ints(perm.iter().map(|&p| p as i64).collect())),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("transpose case {case}"));
    }
}

#[test]
fn reshape_preserves_row_major_data() {
    let mut rng = seeded("reshape");
    for case in 0..CASES {
        let shape = rnd_shape(&mut rng, 3, 4);
        let count: u64 = shape.iter().product();
        // Regroup the same element count into a fresh shape of rank <= 5.
        let mut rest = count;
        let mut out_shape = Vec::new();
        while rest > 1 && out_shape.len() < 4 {
            let mut d = rng.uniform_i64(1, rest.min(6) as i64) as u64;
            while rest % d != 0 {
                d -= 1;
            }
            out_shape.push(d);
            rest /= d;
        }
        if rest > 1 || out_shape.is_empty() {
            out_shape.push(rest);
        }
        let a = rnd_f32(&mut rng, &shape, -5.0, 5.0);
        let expected = a.as_f32().unwrap().to_vec();
        let got = run_node(
            Node::new("op", OpKind::Reshape, ["a"], ["out"]).with_attr(
                "shape",
                AttrValue::Ints(out_shape.iter().map(|&d| d as i64).collect()),
            ),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("reshape case {case}"));
    }
}

#[test]
fn concat_matches_the_slice_stacking_oracle() {
    let mut rng = seeded("concat");
    for case in 0..CASES {
        let mut shape = rnd_shape(&mut rng, 3, 4);
        let axis = rng.uniform_i64(0, shape.len() as i64 - 1) as usize;
        let parts = rng.uniform_i64(2, 3) as usize;
        let mut tensors = Vec::new();
        let mut axis_dims = Vec::new();
        for _ in 0..parts {
            let d = rng.uniform_i64(1, 4) as u64;
            axis_dims.push(d);
            shape[axis] = d;
            tensors.push(rnd_f32(&mut rng, &shape, -5.0, 5.0));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = axis_dims.iter().sum();
        let mut expected = vec![0.0f32; out_shape.iter().product::<u64>() as usize];
        for idx in coords(&out_shape) {
            // Find which part this output coordinate falls into.
            let mut along = idx[axis];
            let mut part = 0usize;
            while along >= axis_dims[part] {
                along -= axis_dims[part];
                part += 1;
            }
            let mut src_idx = idx.clone();
            src_idx[axis] = along;
            let src = &tensors[part];
            expected[offset(&out_shape, &idx)] =
                src.as_f32().unwrap()[offset(&src.shape, &src_idx)];
        }
        let inputs: Vec<TensorSpec> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| TensorSpec::new(format!("t{i}"), DType::F32, dims(&t.shape)))
            .collect();
        let names: Vec<String> = (0..parts).map(|i| format!("t{i}")).collect();
        let feeds: TensorMap = names
            .iter()
            .cloned()
            .zip(tensors.iter().cloned())
            .collect();
        let got = run_node(
            Node::new("op", OpKind::Concat, names.clone(), vec!["out".to_string()])
                .with_attr("axis", AttrValue::Int(axis as i64)),
            inputs,
            &feeds,
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("concat case {case}"));
    }
}

// ---------------------------------------------------------------------------
// Reductions and softmax.

// Reducing every axis without keepdims leaves a rank-zero scalar.
fn reduced_shape(shape: &[u64], axes: &[usize], keepdims: bool) -> Vec<u64> {
    let mut out = Vec::new();
    for (d, &extent) in shape.iter().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out.push(1);
            }
        } else {
            out.push(extent);
        }
    }
    out
}

#[test]
fn reduce_sum_and_max_match_the_sweep_oracle() {
    let mut rng = seeded("reduce");
    for case in 0..CASES {
        let shape = rnd_shape(&mut rng, 3, 5);
        let keepdims = case % 2 == 0;
        let mut axes: Vec<usize> = (0..shape.len())
            .filter(|_| rng.next_f64() < 0.5)
            .collect();
        if axes.is_empty() {
            axes.push(rng.uniform_i64(0, shape.len() as i64 - 1) as usize);
        }
        let a = rnd_f32(&mut rng, &shape, -5.0, 5.0);
        let av = a.as_f32().unwrap().to_vec();
        let out_shape = reduced_shape(&shape, &axes, keepdims);
        let out_count: u64 = out_shape.iter().product();
        let mut sums = vec![0.0f64; out_count as usize];
        let mut maxes = vec![f32::NEG_INFINITY; out_count as usize];
        for idx in coords(&shape) {
            let mut out_idx = Vec::new();
            for (d, &i) in idx.iter().enumerate() {
                if axes.contains(&d) {
                    if keepdims {
                        out_idx.push(0);
                    }
                } else {
                    out_idx.push(i);
                }
            }
            let o = offset(&out_shape, &out_idx);
            let v = av[offset(&shape, &idx)];
            sums[o] += v as f64;
            if v > maxes[o] {
                maxes[o] = v;
            }
        }
        let expected_sum: Vec<f32> = sums.iter().map(|&x| x as f32).collect();
        let axes_attr = AttrValue::Ints(axes.iter().map(|&d| d as i64).collect());
        let got = run_node(
            Node::new("op", OpKind::ReduceSum, ["a"], ["out"])
                .with_attr("axes", axes_attr.clone())
                .with_attr("keepdims", AttrValue::Int(keepdims as i64)),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a.clone())]),
        );
        assert_close_f32(&got, &out_shape, &expected_sum, &format!("reduce_sum case {case}"));
        let got = run_node(
            Node::new("op", OpKind::ReduceMax, ["a"], ["out"])
                .with_attr("axes", axes_attr)
                .with_attr("keepdims", AttrValue::Int(keepdims as i64)),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &out_shape, &maxes, &format!("reduce_max case {case}"));
    }
}

#[test]
fn softmax_matches_the_stabilized_oracle() {
    let mut rng = seeded("softmax");
    for case in 0..CASES {
        let shape = rnd_shape(&mut rng, 3, 5);
        let axis = rng.uniform_i64(0, shape.len() as i64 - 1) as usize;
        let a = rnd_f32(&mut rng, &shape, -6.0, 6.0);
        let av = a.as_f32().unwrap().to_vec();
        let mut expected = vec![0.0f32; av.len()];
        // For every line along `axis`: shift by the max, exponentiate in
        // f64, normalize.
        for idx in coords(&shape) {
            if idx[axis] != 0 {
                continue;
            }
            let mut line = Vec::new();
            for i in 0..shape[axis] {
                let mut p = idx.clone();
                p[axis] = i;
                line.push((offset(&shape, &p), av[offset(&shape, &p)]));
            }
            let m = line.iter().map(|&(_, v)| v).fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = line.iter().map(|&(_, v)| ((v - m) as f64).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (&(o, _), &e) in line.iter().zip(&exps) {
                expected[o] = (e / total) as f32;
            }
        }
        let got = run_node(
            Node::new("op", OpKind::Softmax, ["a"], ["out"])
                .with_attr("axis", AttrValue::Int(axis as i64)),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_close_f32(&got, &shape, &expected, &format!("softmax case {case}"));
    }
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let got = run_node(
        Node::new("op", OpKind::Softmax, ["a"], ["out"]).with_attr("axis", AttrValue::Int(-1)),
        vec![TensorSpec::new("a", DType::F32, dims(&[2]))],
        &feed(&[("a", TensorValue::f32(vec![2], vec![0.0, 0.0]))]),
    );
    assert_eq!(got.as_f32().unwrap(), &[0.5, 0.5]);
}

// ---------------------------------------------------------------------------
// Pooling and convolution.

#[test]
fn maxpool2d_matches_the_window_sweep_oracle() {
    let mut rng = seeded("maxpool2d");
    for case in 0..CASES {
        let (n, c) = (rng.uniform_i64(1, 2) as u64, rng.uniform_i64(1, 3) as u64);
        let (h, w) = (rng.uniform_i64(3, 9) as u64, rng.uniform_i64(3, 9) as u64);
        let (kh, kw) = (
            rng.uniform_i64(1, h.min(3) as i64) as u64,
            rng.uniform_i64(1, w.min(3) as i64) as u64,
        );
        let (sh, sw) = (rng.uniform_i64(1, 2) as u64, rng.uniform_i64(1, 2) as u64);
        // Padding must stay below the kernel extent.
        let (ph, pw) = (
            rng.uniform_i64(0, (kh as i64 - 1).min(1)) as u64,
            rng.uniform_i64(0, (kw as i64 - 1).min(1)) as u64,
        );
        let shape = vec![n, c, h, w];
        let a = rnd_f32(&mut rng, &shape, -5.0, 5.0);
        let av = a.as_f32().unwrap().to_vec();
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let out_shape = vec![n, c, oh, ow];
        let mut expected = Vec::new();
        for ni in 0..n {
            for ci in 0..c {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = yo as i64 * sh as i64 + ky as i64 - ph as i64;
                                let x = xo as i64 * sw as i64 + kx as i64 - pw as i64;
                                if y < 0 || y >= h as i64 || x < 0 || x >= w as i64 {
                                    continue;
                                }
                                let v = av[offset(&shape, &[ni, ci, y as u64, x as u64])];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        expected.push(best);
                    }
                }
            }
        }
        let got = run_node(
            Node::new("op", OpKind::MaxPool2d, ["a"], ["out"])
                .with_attr("kernel", AttrValue::Ints(vec![kh as i64, kw as i64]))
                .with_attr("stride", AttrValue::Ints(vec![sh as i64, sw as i64]))
                .with_attr("pad", AttrValue::Ints(vec![ph as i64, pw as i64])),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("maxpool2d case {case}"));
    }
}

#[test]
fn maxpool3d_matches_the_six_loop_oracle() {
    let mut rng = seeded("maxpool3d");
    for case in 0..CASES {
        let (n, c) = (1u64, rng.uniform_i64(1, 2) as u64);
        let (d, h, w) = (
            rng.uniform_i64(2, 6) as u64,
            rng.uniform_i64(2, 6) as u64,
            rng.uniform_i64(2, 6) as u64,
        );
        let (kd, kh, kw) = (
            rng.uniform_i64(1, d.min(3) as i64) as u64,
            rng.uniform_i64(1, h.min(3) as i64) as u64,
            rng.uniform_i64(1, w.min(3) as i64) as u64,
        );
        let (sd, sh, sw) = (
            rng.uniform_i64(1, 2) as u64,
            rng.uniform_i64(1, 2) as u64,
            rng.uniform_i64(1, 2) as u64,
        );
        let shape = vec![n, c, d, h, w];
        let a = rnd_f32(&mut rng, &shape, -5.0, 5.0);
        let av = a.as_f32().unwrap().to_vec();
        let od = (d - kd) / sd + 1;
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let out_shape = vec![n, c, od, oh, ow];
        let mut expected = Vec::new();
        for ni in 0..n {
            for ci in 0..c {
                for zo in 0..od {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            for kz in 0..kd {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let z = zo * sd + kz;
                                        let y = yo * sh + ky;
                                        let x = xo * sw + kx;
                                        let v = av[offset(&shape, &[ni, ci, z, y, x])];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                            }
                            expected.push(best);
                        }
                    }
                }
            }
        }
        let got = run_node(
            Node::new("op", OpKind::MaxPool3d, ["a"], ["out"])
                .with_attr("kernel", AttrValue::Ints(vec![kd as i64, kh as i64, kw as i64]))
                .with_attr("stride", AttrValue::Ints(vec![sd as i64, sh as i64, sw as i64])),
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            &feed(&[("a", a)]),
        );
        assert_bits_f32(&got, &out_shape, &expected, &format!("maxpool3d case {case}"));
    }
}

#[test]
fn conv2d_matches_the_seven_loop_oracle() {
    let mut rng = seeded("conv2d");
    for case in 0..CASES {
        let (n, ci_, co) = (
            rng.uniform_i64(1, 2) as u64,
            rng.uniform_i64(1, 3) as u64,
            rng.uniform_i64(1, 3) as u64,
        );
        let (h, w) = (rng.uniform_i64(3, 7) as u64, rng.uniform_i64(3, 7) as u64);
        let (kh, kw) = (
            rng.uniform_i64(1, h.min(3) as i64) as u64,
            rng.uniform_i64(1, w.min(3) as i64) as u64,
        );
        let (sh, sw) = (rng.uniform_i64(1, 2) as u64, rng.uniform_i64(1, 2) as u64);
        let (ph, pw) = (rng.uniform_i64(0, 1) as u64, rng.uniform_i64(0, 1) as u64);
        let x_shape = vec![n, ci_, h, w];
        let w_shape = vec![co, ci_, kh, kw];
        let x = rnd_f32(&mut rng, &x_shape, -2.0, 2.0);
        let wt = rnd_f32(&mut rng, &w_shape, -1.0, 1.0);
        let xv = x.as_f32().unwrap().to_vec();
        let wv = wt.as_f32().unwrap().to_vec();
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let out_shape = vec![n, co, oh, ow];
        let mut expected = Vec::new();
        for ni in 0..n {
            for oc in 0..co {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0f32;
                        for ic in 0..ci_ {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let y = yo as i64 * sh as i64 + ky as i64 - ph as i64;
                                    let xx = xo as i64 * sw as i64 + kx as i64 - pw as i64;
                                    if y < 0 || y >= h as i64 || xx < 0 || xx >= w as i64 {
                                        continue;
                                    }
                                    acc += xv[offset(&x_shape, &[ni, ic, y as u64, xx as u64])]
                                        * wv[offset(&w_shape, &[oc, ic, ky, kx])];
                                }
                            }
                        }
                        expected.push(acc);
                    }
                }
            }
        }
        let got = run_node(
            Node::new("op", OpKind::Conv2d, ["x", "w"], ["out"])
                .with_attr("stride", AttrValue::Ints(vec![sh as i64, sw as i64]))
                .with_attr("pad", AttrValue::Ints(vec![ph as i64, pw as i64])),
            vec![
                TensorSpec::new("x", DType::F32, dims(&x_shape)),
                TensorSpec::new("w", DType::F32, dims(&w_shape)),
            ],
            &feed(&[("x", x), ("w", wt)]),
        );
        assert_close_f32(&got, &out_shape, &expected, &format!("conv2d case {case}"));
    }
}

#[test]
fn conv2d_identity_kernel_returns_the_input() {
    let mut rng = seeded("conv2d/identity");
    let x = rnd_f32(&mut rng, &[1, 1, 5, 5], -3.0, 3.0);
    let got = run_node(
        Node::new("op", OpKind::Conv2d, ["x", "w"], ["out"]),
        vec![
            TensorSpec::new("x", DType::F32, dims(&[1, 1, 5, 5])),
            TensorSpec::new("w", DType::F32, dims(&[1, 1, 1, 1])),
        ],
        &feed(&[("x", x.clone()), ("w", TensorValue::f32(vec![1, 1, 1, 1], vec![1.0]))]),
    );
    let expected = x.as_f32().unwrap();
    assert_bits_f32(&got, &[1, 1, 5, 5], expected, "identity conv");
}

// ---------------------------------------------------------------------------
// Floor over division: the arithmetic bedrock of the Mod expansion.

#[test]
fn floor_of_float_division_is_integer_division_on_small_naturals() {
    // Brute force over a dense grid: floor(a / b) in f32 equals a / b in
    // integers for every pair with 0 <= a <= 20, 1 <= b <= 20.
    for a in 0i64..=20 {
        for b in 1i64..=20 {
            let got = run_node(
                Node::new("d", OpKind::Div, ["x", "y"], ["q"]),
                vec![
                    TensorSpec::new("x", DType::F32, dims(&[1])),
                    TensorSpec::new("y", DType::F32, dims(&[1])),
                ],
                &feed(&[
                    ("x", TensorValue::f32(vec![1], vec![a as f32])),
                    ("y", TensorValue::f32(vec![1], vec![b as f32])),
                ]),
            );
            let q = got.as_f32().unwrap()[0];
            assert_eq!(q.floor() as i64, a / b, "floor({a}/{b})");
        }
    }
}

// ---------------------------------------------------------------------------
// Session-level properties.

#[test]
fn identical_feeds_give_bit_identical_outputs() {
    let g = portir_core::toys::toy_conv();
    let session = create_session(&g, Boundary::Identity).unwrap();
    let feeds = portir_core::feedgen::gen_feed_sets(&g.inputs, 7, 1).unwrap().remove(0);
    let one = session.run(&feeds).unwrap();
    let two = session.run(&feeds).unwrap();
    for (name, a) in &one {
        let b = &two[name];
        assert_eq!(a.to_le_bytes(), b.to_le_bytes(), "output {name} differs across runs");
    }
}

#[test]
fn run_profile_covers_every_node() {
    for name in portir_core::toys::TOY_NAMES {
        let g = portir_core::toys::build(name).unwrap();
        if !g.symbols().is_empty() {
            continue;
        }
        let session = create_session(&g, Boundary::Identity).unwrap();
        let feeds = portir_core::feedgen::gen_feed_sets(&g.inputs, 3, 1).unwrap().remove(0);
        let (_, profile) = session.run_profiled(&feeds).unwrap();
        assert_eq!(profile.nodes.len(), g.nodes.len(), "{name}: one profile row per node");
        let total: u64 = profile.nodes.iter().map(|n| n.output_elements).sum();
        assert_eq!(profile.total_elements, total, "{name}: totals add up");
    }
}
