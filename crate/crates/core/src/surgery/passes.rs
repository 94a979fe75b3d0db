//! The built-in rewrite passes.
//!
//! Each pass replaces exactly one diagnosed node with a small subgraph built
//! from better-supported operations. Replacements are spliced in at the
//! original node's position so the node list stays topologically ordered,
//! and replacement accumulation orders match the originals so float results
//! are reproduced bit for bit, not merely approximately.

use std::collections::BTreeSet;

use crate::capability::{Diagnostic, DiagnosticKind};
use crate::ir::shape::{infer_shapes, parse_equation};
use crate::ir::{AttrValue, DTypeClass, Graph, Node, OpKind, ShapeMap};
use crate::surgery::analysis::{analyze, Facts};

use super::{DiagnosticPattern, RewriteOutcome, RewritePass, SurgeryError};

/// Resolves the node a diagnostic points at and checks its op kind.
fn target_node<'g>(
    g: &'g Graph,
    diag: &Diagnostic,
    pass: &'static str,
    expected: OpKind,
) -> Result<&'g Node, SurgeryError> {
    let id = diag.node.as_deref().ok_or_else(|| {
        SurgeryError::PatternMismatch(format!("{pass}: diagnostic does not name a node"))
    })?;
    let node = g
        .node_by_id(id)
        .ok_or_else(|| SurgeryError::NoSuchNode(id.to_string()))?;
    if node.op != expected {
        return Err(SurgeryError::WrongOpKind {
            pass,
            node: id.to_string(),
            expected: expected.as_str(),
            actual: node.op.as_str(),
        });
    }
    Ok(node)
}

/// Allocates names that collide with nothing already in the graph. Node ids
/// and tensor names are pooled together so one generator covers both.
struct NameGen {
    used: BTreeSet<String>,
}

impl NameGen {
    fn new(g: &Graph) -> NameGen {
        let mut used: BTreeSet<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
        for node in &g.nodes {
            used.extend(node.outputs.iter().cloned());
        }
        used.extend(g.inputs.iter().map(|s| s.name.clone()));
        used.extend(g.outputs.iter().map(|s| s.name.clone()));
        used.extend(g.constants.keys().cloned());
        NameGen { used }
    }

    fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        for k in 2u64.. {
            let candidate = format!("{base}_{k}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
        unreachable!("name pool exhausted")
    }
}

/// Replaces the node with id `id` by `with`, splicing at the same position.
fn splice(g: &mut Graph, id: &str, with: Vec<Node>) {
    let pos = g
        .nodes
        .iter()
        .position(|n| n.id == id)
        .expect("splice target exists");
    g.nodes.splice(pos..=pos, with);
}

/// Removes nodes whose outputs nothing consumes, to a fixpoint, then drops
/// constant payloads no surviving node references. Returns removed node ids.
pub(crate) fn prune_dead(g: &mut Graph) -> Vec<String> {
    let mut removed = Vec::new();
    loop {
        let mut live: BTreeSet<String> = g.outputs.iter().map(|s| s.name.clone()).collect();
        for node in &g.nodes {
            live.extend(node.inputs.iter().cloned());
        }
        let dead: Vec<String> = g
            .nodes
            .iter()
            .filter(|n| n.outputs.iter().all(|o| !live.contains(o)))
            .map(|n| n.id.clone())
            .collect();
        if dead.is_empty() {
            break;
        }
        g.nodes.retain(|n| !dead.contains(&n.id));
        removed.extend(dead);
    }
    let referenced: BTreeSet<String> = g
        .nodes
        .iter()
        .filter(|n| n.op == OpKind::Constant)
        .filter_map(|n| n.attr_str("value").map(str::to_string))
        .collect();
    g.constants.retain(|name, _| referenced.contains(name));
    removed
}

fn static_dims(shapes: &ShapeMap, name: &str) -> Result<Vec<u64>, SurgeryError> {
    let info = shapes
        .get(name)
        .ok_or_else(|| SurgeryError::PatternMismatch(format!("no inferred shape for {name}")))?;
    info.static_shape()
        .ok_or_else(|| SurgeryError::SymbolicShape(name.to_string()))
}

fn ints(values: impl IntoIterator<Item = u64>) -> AttrValue {
    AttrValue::Ints(values.into_iter().map(|v| v as i64).collect())
}

/// Rewrites float `Mod` into `Div`, `Floor`, `Mul`, `Sub`. The reference
/// remainder is defined as exactly this sequence of single-precision steps,
/// so the expansion reproduces it bit for bit.
pub struct ExpandModFloat;

impl RewritePass for ExpandModFloat {
    fn id(&self) -> &'static str {
        "expand_mod_float"
    }

    fn pattern(&self) -> DiagnosticPattern {
        DiagnosticPattern {
            kind: DiagnosticKind::UnsupportedOp,
            op: Some(OpKind::Mod),
            dtype_class: None,
        }
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError> {
        let node = target_node(g, diag, self.id(), OpKind::Mod)?.clone();
        let shapes = infer_shapes(g)?;
        let out = node.outputs[0].clone();
        let class = shapes
            .get(&out)
            .map(|info| info.dtype.class())
            .ok_or_else(|| SurgeryError::PatternMismatch(format!("no inferred shape for {out}")))?;
        if class != DTypeClass::Float {
            return Err(SurgeryError::WrongDtype {
                pass: self.id(),
                node: node.id.clone(),
                expected: "float",
                actual: class.to_string(),
            });
        }
        let mut names = NameGen::new(g);
        let a = node.inputs[0].clone();
        let b = node.inputs[1].clone();
        let q = names.fresh(&format!("{out}_q"));
        let fq = names.fresh(&format!("{out}_floor"));
        let prod = names.fresh(&format!("{out}_prod"));
        let id_div = names.fresh(&format!("{}_div", node.id));
        let id_floor = names.fresh(&format!("{}_floor", node.id));
        let id_mul = names.fresh(&format!("{}_mul", node.id));
        let id_sub = names.fresh(&format!("{}_sub", node.id));
        let replacement = vec![
            Node::new(id_div.clone(), OpKind::Div, vec![a.clone(), b.clone()], vec![q.clone()]),
            Node::new(id_floor.clone(), OpKind::Floor, vec![q], vec![fq.clone()]),
            Node::new(id_mul.clone(), OpKind::Mul, vec![b, fq], vec![prod.clone()]),
            Node::new(id_sub.clone(), OpKind::Sub, vec![a, prod], vec![out]),
        ];
        let mut graph = g.clone();
        splice(&mut graph, &node.id, replacement);
        Ok(RewriteOutcome {
            graph,
            removed: vec![node.id],
            added: vec![id_div, id_floor, id_mul, id_sub],
        })
    }
}

/// Rewrites integer `Mod` into `Div`, `Mul`, `Sub`. Integer division
/// truncates toward zero, and this pass only fires when both operands are
/// provably nonnegative, where truncation and flooring agree.
pub struct ExpandModInteger;

impl RewritePass for ExpandModInteger {
    fn id(&self) -> &'static str {
        "expand_mod_integer"
    }

    fn pattern(&self) -> DiagnosticPattern {
        DiagnosticPattern {
            kind: DiagnosticKind::UnsupportedOp,
            op: Some(OpKind::Mod),
            dtype_class: Some(DTypeClass::Int),
        }
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError> {
        let node = target_node(g, diag, self.id(), OpKind::Mod)?.clone();
        let shapes = infer_shapes(g)?;
        let out = node.outputs[0].clone();
        let class = shapes
            .get(&out)
            .map(|info| info.dtype.class())
            .ok_or_else(|| SurgeryError::PatternMismatch(format!("no inferred shape for {out}")))?;
        if class != DTypeClass::Int {
            return Err(SurgeryError::WrongDtype {
                pass: self.id(),
                node: node.id.clone(),
                expected: "int",
                actual: class.to_string(),
            });
        }
        let facts = analyze(g, &shapes);
        let a = node.inputs[0].clone();
        let b = node.inputs[1].clone();
        let fa = facts.get(&a).copied().unwrap_or(Facts::NONE);
        let fb = facts.get(&b).copied().unwrap_or(Facts::NONE);
        if !fa.nonneg || !fb.nonneg {
            return Err(SurgeryError::SignUnsafe(format!(
                "operands of {} are not provably nonnegative",
                node.id
            )));
        }
        let mut names = NameGen::new(g);
        let q = names.fresh(&format!("{out}_q"));
        let prod = names.fresh(&format!("{out}_prod"));
        let id_div = names.fresh(&format!("{}_div", node.id));
        let id_mul = names.fresh(&format!("{}_mul", node.id));
        let id_sub = names.fresh(&format!("{}_sub", node.id));
        let replacement = vec![
            Node::new(id_div.clone(), OpKind::Div, vec![a.clone(), b.clone()], vec![q.clone()]),
            Node::new(id_mul.clone(), OpKind::Mul, vec![b, q], vec![prod.clone()]),
            Node::new(id_sub.clone(), OpKind::Sub, vec![a, prod], vec![out]),
        ];
        let mut graph = g.clone();
        splice(&mut graph, &node.id, replacement);
        Ok(RewriteOutcome {
            graph,
            removed: vec![node.id],
            added: vec![id_div, id_mul, id_sub],
        })
    }
}

/// Rewrites `Floor(Div(u, v))` into integer division when the analysis can
/// prove `u` is a nonnegative integer-valued tensor and `v` is a positive
/// one, where truncating integer division computes the same floor.
pub struct EliminateFloor;

impl RewritePass for EliminateFloor {
    fn id(&self) -> &'static str {
        "eliminate_floor"
    }

    fn pattern(&self) -> DiagnosticPattern {
        DiagnosticPattern {
            kind: DiagnosticKind::UnsupportedOp,
            op: Some(OpKind::Floor),
            dtype_class: None,
        }
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError> {
        let floor = target_node(g, diag, self.id(), OpKind::Floor)?.clone();
        let src = floor.inputs[0].clone();
        let div = g.producer_of(&src).ok_or_else(|| {
            SurgeryError::PatternMismatch(format!(
                "{}: input {src} is not produced by a node",
                floor.id
            ))
        })?;
        if div.op != OpKind::Div {
            return Err(SurgeryError::PatternMismatch(format!(
                "{}: input {src} comes from a {} node rather than Div",
                floor.id,
                div.op.as_str()
            )));
        }
        let div = div.clone();
        let shapes = infer_shapes(g)?;
        let facts = analyze(g, &shapes);
        let u = div.inputs[0].clone();
        let v = div.inputs[1].clone();
        let fu = facts.get(&u).copied().unwrap_or(Facts::NONE);
        let fv = facts.get(&v).copied().unwrap_or(Facts::NONE);
        if !fu.integral || !fu.nonneg {
            return Err(SurgeryError::SignUnsafe(format!(
                "dividend {u} is not provably a nonnegative integer-valued tensor"
            )));
        }
        if !fv.integral || !fv.positive {
            return Err(SurgeryError::SignUnsafe(format!(
                "divisor {v} is not provably a positive integer-valued tensor"
            )));
        }
        let out = floor.outputs[0].clone();
        let mut names = NameGen::new(g);
        let ui = names.fresh(&format!("{out}_lhs_i"));
        let vi = names.fresh(&format!("{out}_rhs_i"));
        let qi = names.fresh(&format!("{out}_q_i"));
        let id_cu = names.fresh(&format!("{}_cast_lhs", floor.id));
        let id_cv = names.fresh(&format!("{}_cast_rhs", floor.id));
        let id_div = names.fresh(&format!("{}_idiv", floor.id));
        let id_cq = names.fresh(&format!("{}_cast_out", floor.id));
        let replacement = vec![
            Node::new(id_cu.clone(), OpKind::Cast, vec![u], vec![ui.clone()])
                .with_attr("to", AttrValue::Str("i64".into())),
            Node::new(id_cv.clone(), OpKind::Cast, vec![v], vec![vi.clone()])
                .with_attr("to", AttrValue::Str("i64".into())),
            Node::new(id_div.clone(), OpKind::Div, vec![ui, vi], vec![qi.clone()]),
            Node::new(id_cq.clone(), OpKind::Cast, vec![qi], vec![out])
                .with_attr("to", AttrValue::Str("f32".into())),
        ];
        let mut graph = g.clone();
        splice(&mut graph, &floor.id, replacement);
        let mut removed = vec![floor.id];
        removed.extend(prune_dead(&mut graph));
        Ok(RewriteOutcome {
            graph,
            removed,
            added: vec![id_cu, id_cv, id_div, id_cq],
        })
    }
}

/// Lowers a two-operand `Einsum` to transpose/reshape/`MatMul`. Operands are
/// permuted to (batch, free, contracted) layouts, flattened to rank 3,
/// multiplied batchwise, and the product is unflattened and permuted into
/// the requested output order. Flat contraction visits index tuples in the
/// same order the reference contraction does, so float accumulation is
/// reproduced exactly.
pub struct LowerEinsum;

impl RewritePass for LowerEinsum {
    fn id(&self) -> &'static str {
        "lower_einsum"
    }

    fn pattern(&self) -> DiagnosticPattern {
        DiagnosticPattern {
            kind: DiagnosticKind::UnsupportedOp,
            op: Some(OpKind::Einsum),
            dtype_class: None,
        }
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError> {
        let node = target_node(g, diag, self.id(), OpKind::Einsum)?.clone();
        let eq = node.attr_str("equation").ok_or_else(|| {
            SurgeryError::PatternMismatch(format!("{}: missing equation attribute", node.id))
        })?;
        let spec = parse_equation(eq).map_err(SurgeryError::UnsupportedEquation)?;
        let classes = spec.classify();
        let shapes = infer_shapes(g)?;
        let ldims = static_dims(&shapes, &node.inputs[0])?;
        let rdims = static_dims(&shapes, &node.inputs[1])?;

        let extent = |c: char| -> u64 {
            if let Some(pos) = spec.lhs[0].iter().position(|&l| l == c) {
                ldims[pos]
            } else {
                let pos = spec.lhs[1].iter().position(|&l| l == c).expect("letter bound");
                rdims[pos]
            }
        };
        let extents = |letters: &[char]| -> Vec<u64> { letters.iter().map(|&c| extent(c)).collect() };
        let product = |letters: &[char]| -> u64 { letters.iter().map(|&c| extent(c)).product() };

        let left_order: Vec<char> = classes
            .batch
            .iter()
            .chain(&classes.free_left)
            .chain(&classes.contracted)
            .copied()
            .collect();
        let right_order: Vec<char> = classes
            .batch
            .iter()
            .chain(&classes.contracted)
            .chain(&classes.free_right)
            .copied()
            .collect();
        let unfolded: Vec<char> = classes
            .batch
            .iter()
            .chain(&classes.free_left)
            .chain(&classes.free_right)
            .copied()
            .collect();
        let perm = |order: &[char], axes: &[char]| -> Vec<u64> {
            order
                .iter()
                .map(|c| axes.iter().position(|a| a == c).expect("letter bound") as u64)
                .collect()
        };
        let perm_left = perm(&left_order, &spec.lhs[0]);
        let perm_right = perm(&right_order, &spec.lhs[1]);
        let perm_out = perm(&spec.rhs, &unfolded);

        let b = product(&classes.batch);
        let m = product(&classes.free_left);
        let k = product(&classes.contracted);
        let n = product(&classes.free_right);

        let out = node.outputs[0].clone();
        let mut names = NameGen::new(g);
        let lhs_t = names.fresh(&format!("{out}_lhs_t"));
        let lhs_3 = names.fresh(&format!("{out}_lhs3"));
        let rhs_t = names.fresh(&format!("{out}_rhs_t"));
        let rhs_3 = names.fresh(&format!("{out}_rhs3"));
        let prod3 = names.fresh(&format!("{out}_mm"));
        let unf = names.fresh(&format!("{out}_unfolded"));
        let id_tl = names.fresh(&format!("{}_t_lhs", node.id));
        let id_rl = names.fresh(&format!("{}_r_lhs", node.id));
        let id_tr = names.fresh(&format!("{}_t_rhs", node.id));
        let id_rr = names.fresh(&format!("{}_r_rhs", node.id));
        let id_mm = names.fresh(&format!("{}_matmul", node.id));
        let id_ro = names.fresh(&format!("{}_r_out", node.id));
        let id_to = names.fresh(&format!("{}_t_out", node.id));
        let unfolded_dims: Vec<u64> = extents(&unfolded);
        let replacement = vec![
            Node::new(id_tl.clone(), OpKind::Transpose, vec![node.inputs[0].clone()], vec![lhs_t.clone()])
                .with_attr("perm", ints(perm_left)),
            Node::new(id_rl.clone(), OpKind::Reshape, vec![lhs_t], vec![lhs_3.clone()])
                .with_attr("shape", ints([b, m, k])),
            Node::new(id_tr.clone(), OpKind::Transpose, vec![node.inputs[1].clone()], vec![rhs_t.clone()])
                .with_attr("perm", ints(perm_right)),
            Node::new(id_rr.clone(), OpKind::Reshape, vec![rhs_t], vec![rhs_3.clone()])
                .with_attr("shape", ints([b, k, n])),
            Node::new(id_mm.clone(), OpKind::MatMul, vec![lhs_3, rhs_3], vec![prod3.clone()]),
            Node::new(id_ro.clone(), OpKind::Reshape, vec![prod3], vec![unf.clone()])
                .with_attr("shape", ints(unfolded_dims)),
            Node::new(id_to.clone(), OpKind::Transpose, vec![unf], vec![out])
                .with_attr("perm", ints(perm_out)),
        ];
        let mut graph = g.clone();
        splice(&mut graph, &node.id, replacement);
        Ok(RewriteOutcome {
            graph,
            removed: vec![node.id],
            added: vec![id_tl, id_rl, id_tr, id_rr, id_mm, id_ro, id_to],
        })
    }
}

/// Splits an unpadded `MaxPool3d` into two `MaxPool2d` stages: one pooling
/// the H and W axes with depth folded into channels, one pooling the depth
/// axis after it is rotated into a spatial position. Max is insensitive to
/// evaluation order, so the split is exact.
pub struct DecomposeMaxPool3d;

impl RewritePass for DecomposeMaxPool3d {
    fn id(&self) -> &'static str {
        "decompose_maxpool3d"
    }

    fn pattern(&self) -> DiagnosticPattern {
        DiagnosticPattern {
            kind: DiagnosticKind::UnsupportedOp,
            op: Some(OpKind::MaxPool3d),
            dtype_class: None,
        }
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError> {
        let node = target_node(g, diag, self.id(), OpKind::MaxPool3d)?.clone();
        if let Some(pad) = node.attr_ints("pad") {
            if pad.iter().any(|&p| p != 0) {
                return Err(SurgeryError::UnsupportedPadding(format!(
                    "{}: the two-stage split only covers unpadded pooling",
                    node.id
                )));
            }
        }
        let missing = |key: &str| {
            SurgeryError::PatternMismatch(format!("{}: missing {key} attribute", node.id))
        };
        let kernel = node.attr_ints("kernel").ok_or_else(|| missing("kernel"))?.to_vec();
        let stride = node.attr_ints("stride").ok_or_else(|| missing("stride"))?.to_vec();
        let (kd, kh, kw) = (kernel[0] as u64, kernel[1] as u64, kernel[2] as u64);
        let (sd, sh, sw) = (stride[0] as u64, stride[1] as u64, stride[2] as u64);
        let shapes = infer_shapes(g)?;
        let in_dims = static_dims(&shapes, &node.inputs[0])?;
        let (n, c, d, h, w) = (in_dims[0], in_dims[1], in_dims[2], in_dims[3], in_dims[4]);
        let d_out = (d - kd) / sd + 1;
        let h_out = (h - kh) / sh + 1;
        let w_out = (w - kw) / sw + 1;

        let out = node.outputs[0].clone();
        let mut names = NameGen::new(g);
        let folded = names.fresh(&format!("{out}_dfold"));
        let pooled_hw = names.fresh(&format!("{out}_hw"));
        let unfolded = names.fresh(&format!("{out}_dsplit"));
        let d_last = names.fresh(&format!("{out}_dlast"));
        let columns = names.fresh(&format!("{out}_cols"));
        let pooled_d = names.fresh(&format!("{out}_dpool"));
        let restored = names.fresh(&format!("{out}_restore"));
        let id_fold = names.fresh(&format!("{}_fold", node.id));
        let id_hw = names.fresh(&format!("{}_pool_hw", node.id));
        let id_split = names.fresh(&format!("{}_split", node.id));
        let id_rot = names.fresh(&format!("{}_rotate", node.id));
        let id_cols = names.fresh(&format!("{}_columns", node.id));
        let id_d = names.fresh(&format!("{}_pool_d", node.id));
        let id_rest = names.fresh(&format!("{}_restore", node.id));
        let id_back = names.fresh(&format!("{}_rotate_back", node.id));
        let replacement = vec![
            Node::new(id_fold.clone(), OpKind::Reshape, vec![node.inputs[0].clone()], vec![folded.clone()])
                .with_attr("shape", ints([n, c * d, h, w])),
            Node::new(id_hw.clone(), OpKind::MaxPool2d, vec![folded], vec![pooled_hw.clone()])
                .with_attr("kernel", ints([kh, kw]))
                .with_attr("stride", ints([sh, sw])),
            Node::new(id_split.clone(), OpKind::Reshape, vec![pooled_hw], vec![unfolded.clone()])
                .with_attr("shape", ints([n, c, d, h_out, w_out])),
            Node::new(id_rot.clone(), OpKind::Transpose, vec![unfolded], vec![d_last.clone()])
                .with_attr("perm", ints([0, 1, 3, 4, 2])),
            Node::new(id_cols.clone(), OpKind::Reshape, vec![d_last], vec![columns.clone()])
                .with_attr("shape", ints([n, c * h_out * w_out, d, 1])),
            Node::new(id_d.clone(), OpKind::MaxPool2d, vec![columns], vec![pooled_d.clone()])
                .with_attr("kernel", ints([kd, 1]))
                .with_attr("stride", ints([sd, 1])),
            Node::new(id_rest.clone(), OpKind::Reshape, vec![pooled_d], vec![restored.clone()])
                .with_attr("shape", ints([n, c, h_out, w_out, d_out])),
            Node::new(id_back.clone(), OpKind::Transpose, vec![restored], vec![out])
                .with_attr("perm", ints([0, 1, 4, 2, 3])),
        ];
        let mut graph = g.clone();
        splice(&mut graph, &node.id, replacement);
        Ok(RewriteOutcome {
            graph,
            removed: vec![node.id],
            added: vec![id_fold, id_hw, id_split, id_rot, id_cols, id_d, id_rest, id_back],
        })
    }
}
