//! Execution sessions over validated graphs.
//!
//! A [`Session`] freezes everything needed to run a graph: the graph itself,
//! inferred shapes, a topological node order, and a numeric [`Boundary`].
//! Sessions are immutable; feeds go in per run and outputs come out. The
//! boundary models the numeric behavior of a deployment target by
//! transforming every f32 tensor as it crosses a node edge.

pub mod compare;
mod kernels;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use thiserror::Error;

use crate::backend::f16::round_f16;
use crate::backend::quant::QuantParams;
use crate::ir::shape::{infer_shapes, ShapeError};
use crate::ir::validate::{validate_graph, StructuralError};
use crate::ir::{DType, Graph, ShapeMap, TensorData, TensorValue};

/// Named tensors in insertion order.
pub type TensorMap = IndexMap<String, TensorValue>;

/// Numeric transform applied to every f32 tensor that crosses a node
/// boundary: graph feeds, constant materializations, and node outputs.
/// Non-float tensors always pass through unchanged.
#[derive(Debug, Clone)]
pub enum Boundary {
    /// Exact reference numerics.
    Identity,
    /// Round-trip through IEEE binary16.
    F16,
    /// Fake-quantize through the per-tensor parameters.
    Quant(BTreeMap<String, QuantParams>),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("graph failed validation: {}", join_errors(.0))]
    Invalid(Vec<StructuralError>),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("input {0} has a symbolic shape; bind all symbols before running")]
    Symbolic(String),
}

fn join_errors(errors: &[StructuralError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("feed mismatch for {name}: {detail}")]
    FeedMismatch { name: String, detail: String },
    #[error("NumericError: {0}")]
    Numeric(String),
    #[error("missing quantization parameters for tensor {0}")]
    MissingParams(String),
    #[error("internal interpreter error: {0}")]
    Internal(String),
}

/// Wall-clock and size accounting for a single run.
#[derive(Debug, Clone)]
pub struct NodeProfile {
    pub node_id: String,
    pub op: String,
    pub output_elements: u64,
    pub duration: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct RunProfile {
    pub nodes: Vec<NodeProfile>,
    pub total_elements: u64,
    pub total_duration: Duration,
}

#[derive(Debug, Clone)]
pub struct Session {
    graph: Graph,
    shapes: ShapeMap,
    order: Vec<usize>,
    boundary: Boundary,
}

/// Validates `graph`, infers shapes, and freezes an execution order.
///
/// Every input must have a fully static shape; graphs with symbolic
/// dimensions must be bound first.
pub fn create_session(graph: &Graph, boundary: Boundary) -> Result<Session, SessionError> {
    let violations = validate_graph(graph);
    if !violations.is_empty() {
        return Err(SessionError::Invalid(violations));
    }
    for spec in &graph.inputs {
        if spec.shape.iter().any(|d| d.is_symbolic()) {
            return Err(SessionError::Symbolic(spec.name.clone()));
        }
    }
    let shapes = infer_shapes(graph)?;
    let order = graph
        .topo_order()
        .expect("validated graph is acyclic");
    Ok(Session { graph: graph.clone(), shapes, order, boundary })
}

impl Session {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shapes(&self) -> &ShapeMap {
        &self.shapes
    }

    pub fn run(&self, feeds: &TensorMap) -> Result<TensorMap, RunError> {
        self.run_inner(feeds, &mut |_, _| {}, None)
    }

    /// Runs and calls `observer` with every tensor the session materializes:
    /// each feed and each node output, after the boundary transform.
    pub fn run_observed(
        &self,
        feeds: &TensorMap,
        observer: &mut dyn FnMut(&str, &TensorValue),
    ) -> Result<TensorMap, RunError> {
        self.run_inner(feeds, observer, None)
    }

    pub fn run_profiled(&self, feeds: &TensorMap) -> Result<(TensorMap, RunProfile), RunError> {
        let mut profile = RunProfile::default();
        let outputs = self.run_inner(feeds, &mut |_, _| {}, Some(&mut profile))?;
        Ok((outputs, profile))
    }

    fn run_inner(
        &self,
        feeds: &TensorMap,
        observer: &mut dyn FnMut(&str, &TensorValue),
        mut profile: Option<&mut RunProfile>,
    ) -> Result<TensorMap, RunError> {
        self.check_feeds(feeds)?;
        let mut env: BTreeMap<String, TensorValue> = BTreeMap::new();
        for spec in &self.graph.inputs {
            let value = self.apply_boundary(&spec.name, feeds[&spec.name].clone())?;
            observer(&spec.name, &value);
            env.insert(spec.name.clone(), value);
        }
        for &ni in &self.order {
            let node = &self.graph.nodes[ni];
            let started = Instant::now();
            let value = kernels::eval_node(&self.graph, &self.shapes, node, &env)?;
            let elapsed = started.elapsed();
            let name = &node.outputs[0];
            let value = self.apply_boundary(name, value)?;
            if let Some(p) = profile.as_deref_mut() {
                let elements = value.element_count() as u64;
                p.nodes.push(NodeProfile {
                    node_id: node.id.clone(),
                    op: node.op.as_str().to_string(),
                    output_elements: elements,
                    duration: elapsed,
                });
                p.total_elements += elements;
                p.total_duration += elapsed;
            }
            observer(name, &value);
            env.insert(name.clone(), value);
        }
        let mut outputs = TensorMap::new();
        for spec in &self.graph.outputs {
            let value = env
                .remove(&spec.name)
                .ok_or_else(|| RunError::Internal(format!("output {} never produced", spec.name)))?;
            outputs.insert(spec.name.clone(), value);
        }
        Ok(outputs)
    }

    fn check_feeds(&self, feeds: &TensorMap) -> Result<(), RunError> {
        for spec in &self.graph.inputs {
            let Some(value) = feeds.get(&spec.name) else {
                return Err(RunError::FeedMismatch {
                    name: spec.name.clone(),
                    detail: "required input not fed".to_string(),
                });
            };
            if value.dtype() != spec.dtype {
                return Err(RunError::FeedMismatch {
                    name: spec.name.clone(),
                    detail: format!("expected dtype {}, got {}", spec.dtype, value.dtype()),
                });
            }
            let expected = spec
                .static_shape()
                .expect("session inputs are static");
            if value.shape != expected {
                return Err(RunError::FeedMismatch {
                    name: spec.name.clone(),
                    detail: format!("expected shape {:?}, got {:?}", expected, value.shape),
                });
            }
        }
        for name in feeds.keys() {
            if !self.graph.inputs.iter().any(|s| &s.name == name) {
                return Err(RunError::FeedMismatch {
                    name: name.clone(),
                    detail: "not a graph input".to_string(),
                });
            }
        }
        Ok(())
    }

    fn apply_boundary(&self, name: &str, value: TensorValue) -> Result<TensorValue, RunError> {
        if value.dtype() != DType::F32 {
            return Ok(value);
        }
        match &self.boundary {
            Boundary::Identity => Ok(value),
            Boundary::F16 => {
                let TensorData::F32(v) = &value.data else { unreachable!() };
                Ok(TensorValue::f32(
                    value.shape.clone(),
                    v.iter().map(|&x| round_f16(x)).collect(),
                ))
            }
            Boundary::Quant(params) => {
                let p = params
                    .get(name)
                    .ok_or_else(|| RunError::MissingParams(name.to_string()))?;
                let TensorData::F32(v) = &value.data else { unreachable!() };
                Ok(TensorValue::f32(
                    value.shape.clone(),
                    v.iter().map(|&x| p.fake_quant(x)).collect(),
                ))
            }
        }
    }
}
