//! Graph surgery: rewrite passes that replace unsupported constructs with
//! equivalent supported ones, plus shape binding, randomized equivalence
//! checking, and repair planning.
//!
//! Every pass follows the same contract: it targets the node named by a
//! capability diagnostic, refuses (with a typed error) when its safety guard
//! cannot be discharged, and otherwise returns a rewritten graph whose
//! input and output signatures are untouched. Planning orders candidate
//! passes by prior outcomes first (the caller supplies recommendations from
//! its knowledge base), then by pass id.

pub mod analysis;
pub mod bind;
pub mod equivalence;
mod passes;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{Diagnostic, DiagnosticKind};
use crate::ir::shape::ShapeError;
use crate::ir::{DTypeClass, Graph, OpKind};

pub use passes::{
    DecomposeMaxPool3d, EliminateFloor, ExpandModFloat, ExpandModInteger, LowerEinsum,
};

#[derive(Debug, Error)]
pub enum SurgeryError {
    #[error("pass {pass} rewrites {expected} nodes, but {node} is {actual}")]
    WrongOpKind { pass: &'static str, node: String, expected: &'static str, actual: &'static str },
    #[error("pass {pass} applies to {expected} operands, but {node} works on {actual}")]
    WrongDtype { pass: &'static str, node: String, expected: &'static str, actual: String },
    #[error("sign safety cannot be proven: {0}")]
    SignUnsafe(String),
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("unsupported equation: {0}")]
    UnsupportedEquation(String),
    #[error("unsupported padding: {0}")]
    UnsupportedPadding(String),
    #[error("node {0} does not exist")]
    NoSuchNode(String),
    #[error("shape of {0} is symbolic; bind shapes before this rewrite")]
    SymbolicShape(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// The diagnostic shapes a pass advertises it can address. `None` fields
/// match anything.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticPattern {
    pub kind: DiagnosticKind,
    pub op: Option<OpKind>,
    pub dtype_class: Option<DTypeClass>,
}

impl DiagnosticPattern {
    pub fn matches(&self, diag: &Diagnostic) -> bool {
        if diag.kind != self.kind {
            return false;
        }
        if let Some(op) = self.op {
            if diag.op.as_deref() != Some(op.as_str()) {
                return false;
            }
        }
        if let Some(class) = self.dtype_class {
            if diag.dtype_class != Some(class) {
                return false;
            }
        }
        true
    }
}

/// A successful rewrite: the new graph plus the node-level delta.
#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub graph: Graph,
    pub removed: Vec<String>,
    pub added: Vec<String>,
}

/// Record of one applied graph change, ordered by a logical sequence number
/// rather than wall-clock time so histories are reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassReceipt {
    pub seq: u64,
    pub pass_id: String,
    /// Signature of the diagnostic that prompted the change, `-` for
    /// non-diagnostic changes such as shape binding.
    pub signature: String,
    pub removed: Vec<String>,
    pub added: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub trait RewritePass {
    /// Stable identifier, also the registry sort key.
    fn id(&self) -> &'static str;

    fn pattern(&self) -> DiagnosticPattern;

    /// Cheap structural precondition: the diagnostic names a node of the op
    /// kind this pass rewrites. Deliberately dtype-blind; dtype guards live
    /// in [`RewritePass::apply`] so mismatches surface as typed failures
    /// that planning can learn from.
    fn applicable(&self, g: &Graph, diag: &Diagnostic) -> bool {
        let Some(op) = self.pattern().op else {
            return diag.node.is_some();
        };
        diag.node
            .as_deref()
            .and_then(|id| g.node_by_id(id))
            .map(|n| n.op == op)
            .unwrap_or(false)
    }

    fn apply(&self, g: &Graph, diag: &Diagnostic) -> Result<RewriteOutcome, SurgeryError>;
}

/// All known passes, ordered by id.
pub fn registry() -> Vec<Box<dyn RewritePass>> {
    vec![
        Box::new(DecomposeMaxPool3d),
        Box::new(EliminateFloor),
        Box::new(ExpandModFloat),
        Box::new(ExpandModInteger),
        Box::new(LowerEinsum),
    ]
}

pub fn find_pass(id: &str) -> Option<Box<dyn RewritePass>> {
    registry().into_iter().find(|p| p.id() == id)
}

/// Orders candidate passes for one diagnostic: recommendations first (in the
/// order given, typically from recorded outcomes), then the remaining
/// matching passes in registry order. Every candidate must match the
/// diagnostic's pattern and pass its structural precondition.
pub fn plan_repairs(g: &Graph, diag: &Diagnostic, recommended: &[String]) -> Vec<String> {
    let passes = registry();
    let mut plan: Vec<String> = Vec::new();
    for id in recommended {
        if plan.iter().any(|p| p == id) {
            continue;
        }
        if let Some(pass) = passes.iter().find(|p| p.id() == id) {
            if pass.pattern().matches(diag) && pass.applicable(g, diag) {
                plan.push(id.clone());
            }
        }
    }
    for pass in &passes {
        if plan.iter().any(|p| p == pass.id()) {
            continue;
        }
        if pass.pattern().matches(diag) && pass.applicable(g, diag) {
            plan.push(pass.id().to_string());
        }
    }
    plan
}

/// True when two graphs expose the same inputs and outputs (names, dtypes,
/// shapes, in order). Rewites must keep this invariant.
pub fn interface_preserved(before: &Graph, after: &Graph) -> bool {
    before.io_signature() == after.io_signature()
}
