//! Shape inference must predict exactly what the interpreter materializes.
//!
//! Each property builds a random graph, asks inference for every tensor's
//! spec, executes the graph, and checks that each tensor the run produces
//! has the inferred dtype and shape. Divergence in either direction is a
//! bug: a run that crashes where inference succeeded, or a tensor whose
//! runtime shape differs from the static one.

use std::collections::BTreeMap;

use portir_core::feedgen::gen_feeds;
use portir_core::interp::{create_session, Boundary};
use portir_core::ir::shape::infer_shapes;
use portir_core::ir::{
    dims, AttrValue, DType, Dim, Graph, Node, OpKind, TensorSpec,
};
use proptest::prelude::*;

/// Runs `g` once and asserts every materialized tensor matches inference.
fn assert_inference_sound(g: &Graph) {
    let inferred = infer_shapes(g).expect("generated graph must infer");
    let session = create_session(g, Boundary::Identity).expect("generated graph must validate");
    let feeds = gen_feeds(&g.inputs, 11).expect("feeds for static inputs");
    let mut seen = Vec::new();
    let result = session.run_observed(&feeds, &mut |name, value| {
        seen.push((name.to_string(), value.dtype(), value.shape.clone()));
    });
    let outputs = result.expect("inferred graph must execute");
    for (name, dtype, shape) in &seen {
        let info = inferred
            .get(name)
            .unwrap_or_else(|| panic!("runtime tensor {name} missing from inference"));
        assert_eq!(&info.dtype, dtype, "{name}: dtype");
        assert_eq!(
            info.shape,
            shape.iter().map(|&d| Dim::Static(d)).collect::<Vec<_>>(),
            "{name}: runtime shape diverged from inference"
        );
    }
    for spec in &g.outputs {
        let got = outputs.get(&spec.name).expect("declared output produced");
        assert_eq!(
            Some(got.shape.clone()),
            spec.static_shape(),
            "{}: declared output shape",
            spec.name
        );
    }
}

fn graph_of(inputs: Vec<TensorSpec>, nodes: Vec<Node>, output: &str) -> Graph {
    let mut g = Graph {
        name: "prop".to_string(),
        inputs,
        outputs: vec![],
        nodes,
        constants: BTreeMap::new(),
    };
    let inferred = infer_shapes(&g).expect("generated graph must infer");
    let info = &inferred[output];
    g.outputs.push(TensorSpec::new(output, info.dtype, info.shape.clone()));
    g
}

fn small_shape() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..=4, 1..=4)
}

/// A companion shape that broadcasts against `full`.
fn mate_of(full: Vec<u64>) -> impl Strategy<Value = (Vec<u64>, Vec<u64>)> {
    let rank = full.len();
    (Just(full), 0..rank, prop::collection::vec(any::<bool>(), rank)).prop_map(
        |(full, drop, squash)| {
            let mate: Vec<u64> = full[drop..]
                .iter()
                .zip(&squash[drop..])
                .map(|(&d, &s)| if s { 1 } else { d })
                .collect();
            (full, mate)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_binary_ops_are_sound(
        (full, mate) in small_shape().prop_flat_map(mate_of),
        swap in any::<bool>(),
        op in prop::sample::select(vec![OpKind::Add, OpKind::Sub, OpKind::Mul]),
    ) {
        let (sa, sb) = if swap { (mate, full) } else { (full, mate) };
        let g = graph_of(
            vec![
                TensorSpec::new("a", DType::F32, dims(&sa)),
                TensorSpec::new("b", DType::F32, dims(&sb)),
            ],
            vec![
                Node::new("bin", op, ["a", "b"], ["c"]),
                Node::new("act", OpKind::Relu, ["c"], ["d"]),
            ],
            "d",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn matmul_is_sound(
        m in 1u64..=5, k in 1u64..=5, n in 1u64..=5,
        batch in prop::option::of(1u64..=3),
    ) {
        let (sa, sb) = match batch {
            Some(b) => (vec![b, m, k], vec![b, k, n]),
            None => (vec![m, k], vec![k, n]),
        };
        let g = graph_of(
            vec![
                TensorSpec::new("a", DType::F32, dims(&sa)),
                TensorSpec::new("b", DType::F32, dims(&sb)),
            ],
            vec![Node::new("mm", OpKind::MatMul, ["a", "b"], ["c"])],
            "c",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn reshape_is_sound(
        shape in small_shape(),
        grouping in any::<u64>(),
    ) {
        let count: u64 = shape.iter().product();
        // Derive some factorization of `count` from the seed.
        let mut rest = count;
        let mut out_shape = Vec::new();
        let mut bits = grouping;
        while rest > 1 && out_shape.len() < 4 {
            let mut d = (bits % 4) + 1;
            bits /= 4;
            while rest % d != 0 {
                d -= 1;
            }
            out_shape.push(d.max(1));
            rest /= d.max(1);
        }
        if rest > 1 || out_shape.is_empty() {
            out_shape.push(rest);
        }
        let g = graph_of(
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            vec![Node::new("r", OpKind::Reshape, ["a"], ["b"]).with_attr(
                "shape",
                AttrValue::Ints(out_shape.iter().map(|&d| d as i64).collect()),
            )],
            "b",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn transpose_is_sound(shape in small_shape(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        let mut bits = seed;
        for i in (1..perm.len()).rev() {
            perm.swap(i, (bits % (i as u64 + 1)) as usize);
            bits /= 7;
        }
        let g = graph_of(
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            vec![Node::new("t", OpKind::Transpose, ["a"], ["b"]).with_attr(
                "perm",
                AttrValue::Ints(perm.iter().map(|&p| p as i64).collect()),
            )],
            "b",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn concat_is_sound(
        base in small_shape(),
        axis_hint in any::<usize>(),
        extents in prop::collection::vec(1u64..=3, 2..=3),
    ) {
        let axis = axis_hint % base.len();
        let mut inputs = Vec::new();
        let mut nodes = Vec::new();
        let mut names = Vec::new();
        for (i, &e) in extents.iter().enumerate() {
            let mut s = base.clone();
            s[axis] = e;
            names.push(format!("t{i}"));
            inputs.push(TensorSpec::new(format!("t{i}"), DType::F32, dims(&s)));
        }
        nodes.push(
            Node::new("cat", OpKind::Concat, names, vec!["out".to_string()])
                .with_attr("axis", AttrValue::Int(axis as i64)),
        );
        let g = graph_of(inputs, nodes, "out");
        assert_inference_sound(&g);
    }

    #[test]
    fn reductions_and_softmax_are_sound(
        shape in small_shape(),
        mask in any::<u64>(),
        keepdims in any::<bool>(),
        which in prop::sample::select(vec![OpKind::ReduceSum, OpKind::ReduceMax]),
    ) {
        let mut axes: Vec<i64> = (0..shape.len())
            .filter(|&d| mask & (1 << d) != 0)
            .map(|d| d as i64)
            .collect();
        if axes.is_empty() {
            axes.push((mask % shape.len() as u64) as i64);
        }
        let g = graph_of(
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            vec![
                Node::new("red", which, ["a"], ["b"])
                    .with_attr("axes", AttrValue::Ints(axes))
                    .with_attr("keepdims", AttrValue::Int(keepdims as i64)),
            ],
            "b",
        );
        assert_inference_sound(&g);

        let axis = (mask % shape.len() as u64) as i64;
        let g = graph_of(
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            vec![Node::new("sm", OpKind::Softmax, ["a"], ["b"])
                .with_attr("axis", AttrValue::Int(axis))],
            "b",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn maxpool2d_is_sound(
        n in 1u64..=2, c in 1u64..=3,
        h in 3u64..=8, w in 3u64..=8,
        kh in 1u64..=3, kw in 1u64..=3,
        sh in 1u64..=2, sw in 1u64..=2,
        pad in any::<bool>(),
    ) {
        let kh = kh.min(h);
        let kw = kw.min(w);
        let (ph, pw) = if pad { ((kh - 1).min(1), (kw - 1).min(1)) } else { (0, 0) };
        let g = graph_of(
            vec![TensorSpec::new("x", DType::F32, dims(&[n, c, h, w]))],
            vec![
                Node::new("p", OpKind::MaxPool2d, ["x"], ["y"])
                    .with_attr("kernel", AttrValue::Ints(vec![kh as i64, kw as i64]))
                    .with_attr("stride", AttrValue::Ints(vec![sh as i64, sw as i64]))
                    .with_attr("pad", AttrValue::Ints(vec![ph as i64, pw as i64])),
            ],
            "y",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn conv2d_is_sound(
        n in 1u64..=2, ci in 1u64..=3, co in 1u64..=3,
        h in 3u64..=7, w in 3u64..=7,
        kh in 1u64..=3, kw in 1u64..=3,
        stride in 1u64..=2,
        pad in any::<bool>(),
    ) {
        let kh = kh.min(h);
        let kw = kw.min(w);
        let (ph, pw) = if pad { ((kh - 1).min(1), (kw - 1).min(1)) } else { (0, 0) };
        let g = graph_of(
            vec![
                TensorSpec::new("x", DType::F32, dims(&[n, ci, h, w])),
                TensorSpec::new("w", DType::F32, dims(&[co, ci, kh, kw])),
            ],
            vec![
                Node::new("cv", OpKind::Conv2d, ["x", "w"], ["y"])
                    .with_attr("stride", AttrValue::Ints(vec![stride as i64, stride as i64]))
                    .with_attr("pad", AttrValue::Ints(vec![ph as i64, pw as i64])),
            ],
            "y",
        );
        assert_inference_sound(&g);
    }

    #[test]
    fn cast_chains_are_sound(shape in small_shape(), back in any::<bool>()) {
        let mut nodes = vec![
            Node::new("c1", OpKind::Cast, ["a"], ["b"])
                .with_attr("to", AttrValue::Str("i64".into())),
        ];
        let out = if back {
            nodes.push(
                Node::new("c2", OpKind::Cast, ["b"], ["c"])
                    .with_attr("to", AttrValue::Str("f32".into())),
            );
            "c"
        } else {
            "b"
        };
        let g = graph_of(
            vec![TensorSpec::new("a", DType::F32, dims(&shape))],
            nodes,
            out,
        );
        assert_inference_sound(&g);
    }
}

#[test]
fn symbolic_graphs_infer_but_refuse_to_run_unbound() {
    let g = portir_core::toys::build("toy-dyn").unwrap();
    assert!(infer_shapes(&g).is_ok(), "symbolic graphs still infer");
    let err = create_session(&g, Boundary::Identity).unwrap_err();
    assert!(
        err.to_string().contains("bind"),
        "unbound symbolic input must point at binding, got: {err}"
    );
}

#[test]
fn binding_symbols_yields_static_shapes() {
    let g = portir_core::toys::build("toy-dyn").unwrap();
    let mut bindings = BTreeMap::new();
    bindings.insert("N".to_string(), 3u64);
    let bound = portir_core::surgery::bind::bind_all(&g, &bindings).unwrap();
    assert!(bound.symbols().is_empty());
    assert_inference_sound(&bound);
}
