//! Structural well-formedness checks: single assignment, acyclicity, arity,
//! and attribute schemas. Shape and dtype propagation is a separate step in
//! [`super::shape`]; this module never looks at extents beyond basic bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{is_identifier, AttrValue, Dim, Graph, Node, OpKind, TensorSpec};

/// Violation classes reported by [`validate_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationClass {
    /// A consumed tensor name is never defined, or a graph output is missing.
    UndefinedInput,
    /// The node participates in a dependency cycle.
    Cycle,
    /// A tensor name or node id is defined more than once.
    DuplicateName,
    /// Input or output count does not match the op signature.
    BadArity,
    /// Missing, mistyped, out-of-range, or unknown attribute; also covers
    /// malformed names, ranks above 5, and zero extents.
    BadAttribute,
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationClass::UndefinedInput => "UndefinedInput",
            ViolationClass::Cycle => "Cycle",
            ViolationClass::DuplicateName => "DuplicateName",
            ViolationClass::BadArity => "BadArity",
            ViolationClass::BadAttribute => "BadAttribute",
        })
    }
}

/// One structural violation. `node` is the offending node id, or `"<graph>"`
/// for graph-level problems (bad specs, missing outputs, orphan constants).
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralError {
    pub node: String,
    pub class: ViolationClass,
    pub detail: String,
}

impl StructuralError {
    fn graph(class: ViolationClass, detail: impl Into<String>) -> Self {
        StructuralError {
            node: "<graph>".to_string(),
            class,
            detail: detail.into(),
        }
    }

    fn at(node: &str, class: ViolationClass, detail: impl Into<String>) -> Self {
        StructuralError {
            node: node.to_string(),
            class,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for StructuralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.node, self.class, self.detail)
    }
}

pub const MAX_RANK: usize = 5;

/// Checks every structural invariant and returns all violations in a
/// deterministic order. An empty result means the graph is well-formed.
pub fn validate_graph(g: &Graph) -> Vec<StructuralError> {
    let mut errs = Vec::new();

    check_specs(&g.inputs, "input", &mut errs);
    check_specs(&g.outputs, "output", &mut errs);

    // Name uniqueness across inputs and node outputs (single assignment).
    let mut seen: BTreeMap<&str, String> = BTreeMap::new();
    for spec in &g.inputs {
        if let Some(prev) = seen.insert(&spec.name, "<graph>".to_string()) {
            errs.push(StructuralError::graph(
                ViolationClass::DuplicateName,
                format!("input {:?} already defined by {prev}", spec.name),
            ));
        }
    }
    let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
    for node in &g.nodes {
        if !is_identifier(&node.id) {
            errs.push(StructuralError::at(
                &node.id,
                ViolationClass::BadAttribute,
                format!("node id {:?} is not a valid identifier", node.id),
            ));
        }
        if !seen_ids.insert(&node.id) {
            errs.push(StructuralError::at(
                &node.id,
                ViolationClass::DuplicateName,
                format!("node id {:?} is already in use", node.id),
            ));
        }
        let mut local: BTreeSet<&str> = BTreeSet::new();
        for out in &node.outputs {
            if !is_identifier(out) {
                errs.push(StructuralError::at(
                    &node.id,
                    ViolationClass::BadAttribute,
                    format!("output name {out:?} is not a valid identifier"),
                ));
            }
            if !local.insert(out) {
                errs.push(StructuralError::at(
                    &node.id,
                    ViolationClass::DuplicateName,
                    format!("node lists output {out:?} twice"),
                ));
                continue;
            }
            if let Some(prev) = seen.insert(out, node.id.clone()) {
                errs.push(StructuralError::at(
                    &node.id,
                    ViolationClass::DuplicateName,
                    format!("tensor {out:?} already defined by {prev}"),
                ));
            }
        }
    }

    // Every consumed name must be defined somewhere.
    for node in &g.nodes {
        for inp in &node.inputs {
            if !seen.contains_key(inp.as_str()) {
                errs.push(StructuralError::at(
                    &node.id,
                    ViolationClass::UndefinedInput,
                    format!("consumes tensor {inp:?} which is never produced"),
                ));
            }
        }
    }
    let mut seen_outputs: BTreeSet<&str> = BTreeSet::new();
    for spec in &g.outputs {
        if !seen_outputs.insert(&spec.name) {
            errs.push(StructuralError::graph(
                ViolationClass::DuplicateName,
                format!("output {:?} is declared twice", spec.name),
            ));
        }
        if !seen.contains_key(spec.name.as_str()) {
            errs.push(StructuralError::graph(
                ViolationClass::UndefinedInput,
                format!("declared output {:?} is never produced", spec.name),
            ));
        }
    }

    for node in &g.nodes {
        check_arity(node, &mut errs);
        check_attrs(g, node, &mut errs);
    }

    // Constant payloads must be referenced by exactly the Constant nodes.
    let referenced: BTreeSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.op == OpKind::Constant)
        .filter_map(|n| n.attr_str("value"))
        .collect();
    for (name, value) in &g.constants {
        if !referenced.contains(name.as_str()) {
            errs.push(StructuralError::graph(
                ViolationClass::BadAttribute,
                format!("constant payload {name:?} is not referenced by any Constant node"),
            ));
        }
        if value.rank() > MAX_RANK {
            errs.push(StructuralError::graph(
                ViolationClass::BadAttribute,
                format!("constant payload {name:?} has rank {} (max 5)", value.rank()),
            ));
        }
    }

    if let Err(stuck) = g.topo_order() {
        for id in stuck {
            errs.push(StructuralError::at(
                &id,
                ViolationClass::Cycle,
                "node is part of a dependency cycle".to_string(),
            ));
        }
    }

    errs
}

fn check_specs(specs: &[TensorSpec], role: &str, errs: &mut Vec<StructuralError>) {
    for spec in specs {
        if !is_identifier(&spec.name) {
            errs.push(StructuralError::graph(
                ViolationClass::BadAttribute,
                format!("{role} name {:?} is not a valid identifier", spec.name),
            ));
        }
        if spec.shape.len() > MAX_RANK {
            errs.push(StructuralError::graph(
                ViolationClass::BadAttribute,
                format!("{role} {:?} has rank {} (max 5)", spec.name, spec.shape.len()),
            ));
        }
        for dim in &spec.shape {
            match dim {
                Dim::Static(0) => errs.push(StructuralError::graph(
                    ViolationClass::BadAttribute,
                    format!("{role} {:?} has a zero extent", spec.name),
                )),
                Dim::Symbolic(s) if !is_identifier(s) => errs.push(StructuralError::graph(
                    ViolationClass::BadAttribute,
                    format!("{role} {:?} has invalid symbolic dim {s:?}", spec.name),
                )),
                _ => {}
            }
        }
        if let Some((lo, hi)) = spec.range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                errs.push(StructuralError::graph(
                    ViolationClass::BadAttribute,
                    format!("{role} {:?} has malformed range [{lo}, {hi}]", spec.name),
                ));
            }
        }
    }
}

fn check_arity(node: &Node, errs: &mut Vec<StructuralError>) {
    let (min_in, max_in, n_out) = node.op.arity();
    let n = node.inputs.len();
    let ok = n >= min_in && max_in.map(|m| n <= m).unwrap_or(true);
    if !ok {
        errs.push(StructuralError::at(
            &node.id,
            ViolationClass::BadArity,
            format!("{} takes {min_in}{} inputs, got {n}", node.op, match max_in {
                Some(m) if m == min_in => String::new(),
                Some(m) => format!("..{m}"),
                None => "+".to_string(),
            }),
        ));
    }
    if node.outputs.len() != n_out {
        errs.push(StructuralError::at(
            &node.id,
            ViolationClass::BadArity,
            format!("{} produces {n_out} output(s), got {}", node.op, node.outputs.len()),
        ));
    }
}

/// Attribute schema for one op: required and optional keys with type and
/// value checks. Unknown keys are rejected.
fn check_attrs(g: &Graph, node: &Node, errs: &mut Vec<StructuralError>) {
    let mut bad = |detail: String| {
        errs.push(StructuralError::at(&node.id, ViolationClass::BadAttribute, detail));
    };
    let known: &[&str] = match node.op {
        OpKind::Constant => &["value"],
        OpKind::Cast => &["to"],
        OpKind::Transpose => &["perm"],
        OpKind::Reshape => &["shape"],
        OpKind::Concat => &["axis"],
        OpKind::ReduceMax | OpKind::ReduceSum => &["axes", "keepdims"],
        OpKind::Softmax => &["axis"],
        OpKind::MaxPool2d | OpKind::MaxPool3d => &["kernel", "stride", "pad"],
        OpKind::Conv2d => &["stride", "pad"],
        OpKind::Einsum => &["equation"],
        _ => &[],
    };
    for key in node.attrs.keys() {
        if !known.contains(&key.as_str()) {
            bad(format!("unknown attribute {key:?} on {}", node.op));
        }
    }

    let require_ints = |key: &str, len: usize, min: i64| -> Option<String> {
        match node.attr_ints(key) {
            Some(v) if v.len() == len && v.iter().all(|&x| x >= min) => None,
            Some(v) => Some(format!("{key:?} must be {len} ints >= {min}, got {v:?}")),
            None => Some(format!("{} requires int-list attribute {key:?}", node.op)),
        }
    };

    match node.op {
        OpKind::Constant => match node.attr_str("value") {
            Some(name) => {
                if !g.constants.contains_key(name) {
                    bad(format!("references missing constant payload {name:?}"));
                }
            }
            None => bad("Constant requires string attribute \"value\"".to_string()),
        },
        OpKind::Cast => match node.attr_str("to") {
            Some(s) => {
                if super::DType::parse(s).is_none() {
                    bad(format!("unknown target dtype {s:?}"));
                }
            }
            None => bad("Cast requires string attribute \"to\"".to_string()),
        },
        OpKind::Transpose => {
            if node.attr_ints("perm").is_none() {
                bad("Transpose requires int-list attribute \"perm\"".to_string());
            }
        }
        OpKind::Reshape => match node.attr_ints("shape") {
            Some(target) => {
                let wildcards = target.iter().filter(|&&d| d == -1).count();
                if wildcards > 1 {
                    bad(format!("reshape target {target:?} has {wildcards} wildcards (max 1)"));
                }
                if target.iter().any(|&d| d == 0 || d < -1) {
                    bad(format!("reshape target {target:?} has extents below 1"));
                }
                if target.len() > MAX_RANK {
                    bad(format!("reshape target rank {} (max 5)", target.len()));
                }
            }
            None => bad("Reshape requires int-list attribute \"shape\"".to_string()),
        },
        OpKind::Concat => {
            if node.attr_int("axis").is_none() {
                bad("Concat requires int attribute \"axis\"".to_string());
            }
        }
        OpKind::ReduceMax | OpKind::ReduceSum => {
            match node.attr_ints("axes") {
                Some(axes) if !axes.is_empty() => {}
                Some(_) => bad("\"axes\" must be non-empty".to_string()),
                None => bad(format!("{} requires int-list attribute \"axes\"", node.op)),
            }
            if let Some(kd) = node.attrs.get("keepdims") {
                match kd {
                    AttrValue::Int(0) | AttrValue::Int(1) => {}
                    other => bad(format!("\"keepdims\" must be 0 or 1, got {other:?}")),
                }
            }
        }
        OpKind::Softmax => {
            if node.attrs.contains_key("axis") && node.attr_int("axis").is_none() {
                bad("\"axis\" must be an int".to_string());
            }
        }
        OpKind::MaxPool2d | OpKind::MaxPool3d => {
            let n = if node.op == OpKind::MaxPool2d { 2 } else { 3 };
            if let Some(detail) = require_ints("kernel", n, 1) {
                bad(detail);
            }
            if let Some(detail) = require_ints("stride", n, 1) {
                bad(detail);
            }
            if node.attrs.contains_key("pad") {
                if let Some(detail) = require_ints("pad", n, 0) {
                    bad(detail);
                }
            }
            // Windows must overlap real data: pad strictly below kernel.
            if let (Some(kernel), Some(pad)) = (node.attr_ints("kernel"), node.attr_ints("pad")) {
                if kernel.len() == n && pad.len() == n {
                    for (k, p) in kernel.iter().zip(pad) {
                        if p >= k {
                            bad(format!("pad {p} must be smaller than kernel {k}"));
                        }
                    }
                }
            }
        }
        OpKind::Conv2d => {
            if node.attrs.contains_key("stride") {
                if let Some(detail) = require_ints("stride", 2, 1) {
                    bad(detail);
                }
            }
            if node.attrs.contains_key("pad") {
                if let Some(detail) = require_ints("pad", 2, 0) {
                    bad(detail);
                }
            }
        }
        OpKind::Einsum => {
            if node.attr_str("equation").is_none() {
                bad("Einsum requires string attribute \"equation\"".to_string());
            }
        }
        _ => {}
    }
}
