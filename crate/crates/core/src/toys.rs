//! Built-in example models.
//!
//! Each toy is a small, deterministic graph that trips exactly one
//! interesting porting obstacle (or none, for the clean baseline). Weights
//! are generated from fixed seeds, so two calls always produce byte-identical
//! graphs.
//!
//! - `toy-conv`: clean convolutional block; compiles as-is, good for
//!   quantization runs
//! - `toy-det`: float Mod on a cast integer index (detection-style anchor
//!   decode); needs the Mod expansion, and on targets without Floor a
//!   follow-up Floor elimination
//! - `toy-det-int`: the same decode in integer arithmetic; needs the integer
//!   Mod expansion
//! - `toy-lpr`: video-style MaxPool3d; needs the pool decomposition
//! - `toy-einsum`: attention-style Einsum contraction; needs the einsum
//!   lowering
//! - `toy-dyn`: symbolic batch dimension; needs a shape binding, no rewrites


use crate::feedgen::{derive_seed, SplitMix64};
use crate::ir::{
    dims, AttrValue, DType, Dim, Graph, Node, OpKind, TensorSpec, TensorValue,
};

/// Seed namespace for toy weights. Changing it would change every toy graph
/// hash, so it is fixed forever.
const WEIGHT_SEED: u64 = 0x7001;

fn weight(graph: &str, name: &str, shape: &[u64], scale: f64) -> TensorValue {
    let mut rng = SplitMix64::new(derive_seed(WEIGHT_SEED, &format!("{graph}/{name}")));
    let count = crate::ir::element_count(shape) as usize;
    let values = (0..count).map(|_| rng.uniform_f32(-scale, scale)).collect();
    TensorValue::f32(shape.to_vec(), values)
}

pub const TOY_NAMES: [&str; 6] = [
    "toy-conv",
    "toy-det",
    "toy-det-int",
    "toy-lpr",
    "toy-einsum",
    "toy-dyn",
];

/// Builds a toy by name.
pub fn build(name: &str) -> Option<Graph> {
    match name {
        "toy-conv" => Some(toy_conv()),
        "toy-det" => Some(toy_det()),
        "toy-det-int" => Some(toy_det_int()),
        "toy-lpr" => Some(toy_lpr()),
        "toy-einsum" => Some(toy_einsum()),
        "toy-dyn" => Some(toy_dyn()),
        _ => None,
    }
}

/// Small super-resolution style block: two 3x3 convolutions with biases and
/// a residual skip. Every op is plain; the interest is numeric (fp16 and
/// quantized alignment).
pub fn toy_conv() -> Graph {
    let mut g = Graph::new("toy-conv");
    g.inputs.push(TensorSpec::new("image", DType::F32, dims(&[1, 3, 16, 16])).with_range(0.0, 1.0));
    g.outputs.push(TensorSpec::new("enhanced", DType::F32, dims(&[1, 3, 16, 16])));
    g.add_constant("conv1_w", weight("toy-conv", "conv1_w", &[8, 3, 3, 3], 0.25));
    g.add_constant("conv1_b", weight("toy-conv", "conv1_b", &[8, 1, 1], 0.1));
    // The residual branch stays small relative to the skip, as enhancement
    // deltas are in practice; it also keeps the quantized error budget sane.
    g.add_constant("conv2_w", weight("toy-conv", "conv2_w", &[3, 8, 3, 3], 0.05));
    g.add_constant("conv2_b", weight("toy-conv", "conv2_b", &[3, 1, 1], 0.02));
    g.nodes.push(
        Node::new("conv1", OpKind::Conv2d, ["image", "conv1_w"], ["feat"])
            .with_attr("stride", AttrValue::Ints(vec![1, 1]))
            .with_attr("pad", AttrValue::Ints(vec![1, 1])),
    );
    g.nodes.push(Node::new("bias1", OpKind::Add, ["feat", "conv1_b"], ["feat_b"]));
    g.nodes.push(Node::new("act1", OpKind::Relu, ["feat_b"], ["feat_r"]));
    g.nodes.push(
        Node::new("conv2", OpKind::Conv2d, ["feat_r", "conv2_w"], ["delta"])
            .with_attr("stride", AttrValue::Ints(vec![1, 1]))
            .with_attr("pad", AttrValue::Ints(vec![1, 1])),
    );
    g.nodes.push(Node::new("bias2", OpKind::Add, ["delta", "conv2_b"], ["delta_b"]));
    g.nodes.push(Node::new("skip", OpKind::Add, ["delta_b", "image"], ["enhanced"]));
    g
}

/// Detection-style anchor decode in float arithmetic. The cell column is
/// recovered with `Mod(index_as_f32, 4)`, an op most mobile targets lack.
pub fn toy_det() -> Graph {
    let mut g = Graph::new("toy-det");
    g.inputs.push(TensorSpec::new("anchor_idx", DType::I64, dims(&[16])).with_range(0.0, 9.0));
    g.inputs.push(TensorSpec::new("offsets", DType::F32, dims(&[16])));
    g.outputs.push(TensorSpec::new("boxes", DType::F32, dims(&[16])));
    g.add_constant("grid_w", TensorValue::scalar_f32(4.0));
    g.add_constant("cell_size", TensorValue::scalar_f32(0.25));
    g.nodes.push(
        Node::new("to_float", OpKind::Cast, ["anchor_idx"], ["idx_f"])
            .with_attr("to", AttrValue::Str("f32".to_string())),
    );
    g.nodes.push(Node::new("col", OpKind::Mod, ["idx_f", "grid_w"], ["col_f"]));
    g.nodes.push(Node::new("scale", OpKind::Mul, ["col_f", "cell_size"], ["col_pos"]));
    g.nodes.push(Node::new("shift", OpKind::Add, ["col_pos", "offsets"], ["raw"]));
    g.nodes.push(Node::new("clip", OpKind::Relu, ["raw"], ["boxes"]));
    g
}

/// The same anchor decode kept in integer arithmetic until the end.
pub fn toy_det_int() -> Graph {
    let mut g = Graph::new("toy-det-int");
    g.inputs.push(TensorSpec::new("anchor_idx", DType::I64, dims(&[16])).with_range(0.0, 9.0));
    g.inputs.push(TensorSpec::new("offsets", DType::F32, dims(&[16])));
    g.outputs.push(TensorSpec::new("boxes", DType::F32, dims(&[16])));
    g.add_constant("grid_w", TensorValue::i64(vec![], vec![4]));
    g.add_constant("cell_size", TensorValue::scalar_f32(0.25));
    g.nodes.push(Node::new("col", OpKind::Mod, ["anchor_idx", "grid_w"], ["col_i"]));
    g.nodes.push(
        Node::new("to_float", OpKind::Cast, ["col_i"], ["col_f"])
            .with_attr("to", AttrValue::Str("f32".to_string())),
    );
    g.nodes.push(Node::new("scale", OpKind::Mul, ["col_f", "cell_size"], ["col_pos"]));
    g.nodes.push(Node::new("shift", OpKind::Add, ["col_pos", "offsets"], ["raw"]));
    g.nodes.push(Node::new("clip", OpKind::Relu, ["raw"], ["boxes"]));
    g
}

/// Plate-reader style clip head: a 3d max pool over a short frame window,
/// folded into channels for a 1x1 convolution.
pub fn toy_lpr() -> Graph {
    let mut g = Graph::new("toy-lpr");
    g.inputs.push(TensorSpec::new("clip", DType::F32, dims(&[1, 2, 4, 8, 8])).with_range(0.0, 1.0));
    g.outputs.push(TensorSpec::new("glyphs", DType::F32, dims(&[1, 2, 4, 4])));
    g.add_constant("head_w", weight("toy-lpr", "head_w", &[2, 4, 1, 1], 0.5));
    g.nodes.push(
        Node::new("pool_t", OpKind::MaxPool3d, ["clip"], ["pooled"])
            .with_attr("kernel", AttrValue::Ints(vec![2, 2, 2]))
            .with_attr("stride", AttrValue::Ints(vec![2, 2, 2])),
    );
    g.nodes.push(
        Node::new("fold", OpKind::Reshape, ["pooled"], ["folded"])
            .with_attr("shape", AttrValue::Ints(vec![1, 4, 4, 4])),
    );
    g.nodes.push(Node::new("head", OpKind::Conv2d, ["folded", "head_w"], ["logits"]));
    g.nodes.push(Node::new("act", OpKind::Relu, ["logits"], ["glyphs"]));
    g
}

/// Attention-style scoring: a batched `bqc,bkc->bqk` contraction normalized
/// with Softmax.
pub fn toy_einsum() -> Graph {
    let mut g = Graph::new("toy-einsum");
    g.inputs.push(TensorSpec::new("queries", DType::F32, dims(&[2, 4, 8])));
    g.inputs.push(TensorSpec::new("keys", DType::F32, dims(&[2, 6, 8])));
    g.outputs.push(TensorSpec::new("attn", DType::F32, dims(&[2, 4, 6])));
    g.nodes.push(
        Node::new("score", OpKind::Einsum, ["queries", "keys"], ["scores"])
            .with_attr("equation", AttrValue::Str("bqc,bkc->bqk".to_string())),
    );
    g.nodes.push(
        Node::new("norm", OpKind::Softmax, ["scores"], ["attn"])
            .with_attr("axis", AttrValue::Int(-1)),
    );
    g
}

/// Linear head over a symbolic batch: nothing to rewrite, but the batch
/// symbol must be bound before the target will take it.
pub fn toy_dyn() -> Graph {
    let mut g = Graph::new("toy-dyn");
    g.inputs.push(TensorSpec::new(
        "features",
        DType::F32,
        vec![Dim::Symbolic("N".to_string()), Dim::Static(4)],
    ));
    g.outputs.push(TensorSpec::new(
        "scores",
        DType::F32,
        vec![Dim::Symbolic("N".to_string()), Dim::Static(3)],
    ));
    g.add_constant("proj_w", weight("toy-dyn", "proj_w", &[4, 3], 0.5));
    g.nodes.push(Node::new("proj", OpKind::MatMul, ["features", "proj_w"], ["raw"]));
    g.nodes.push(Node::new("act", OpKind::Relu, ["raw"], ["scores"]));
    g
}
