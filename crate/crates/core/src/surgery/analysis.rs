//! Forward value-fact analysis used by rewrite guards.
//!
//! Tracks three provable properties per tensor: every element is
//! nonnegative, every element is strictly positive, and every element is an
//! integer value (regardless of storage dtype). Facts come only from
//! declared input ranges, dtypes, and constant payloads; they are never
//! assumed from default feed ranges. All transfer functions are
//! conservative: a fact is claimed only when it holds for every input the
//! graph could legally receive.

use std::collections::BTreeMap;

use crate::backend::f16::f32_from_f16_bits;
use crate::ir::{DType, Graph, Node, OpKind, ShapeMap, TensorData, TensorValue};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Facts {
    pub nonneg: bool,
    pub positive: bool,
    pub integral: bool,
}

impl Facts {
    pub const NONE: Facts = Facts { nonneg: false, positive: false, integral: false };
}

pub type FactMap = BTreeMap<String, Facts>;

fn input_facts(dtype: DType, range: Option<(f64, f64)>) -> Facts {
    let lo = range.map(|(lo, _)| lo);
    Facts {
        nonneg: dtype == DType::U8 || lo.is_some_and(|lo| lo >= 0.0),
        positive: lo.is_some_and(|lo| lo > 0.0),
        integral: dtype.is_int(),
    }
}

fn constant_facts(value: &TensorValue) -> Facts {
    let as_f64: Vec<f64> = match &value.data {
        TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::F16(v) => v.iter().map(|&x| f32_from_f16_bits(x) as f64).collect(),
        TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I16(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::I8(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
    };
    let finite = as_f64.iter().all(|v| v.is_finite());
    Facts {
        nonneg: finite && as_f64.iter().all(|&v| v >= 0.0),
        positive: finite && as_f64.iter().all(|&v| v > 0.0),
        integral: value.dtype().is_int()
            || (finite && as_f64.iter().all(|&v| v.fract() == 0.0)),
    }
}

fn node_facts(g: &Graph, shapes: &ShapeMap, node: &Node, facts: &FactMap) -> Facts {
    let input = |i: usize| -> Facts {
        node.inputs
            .get(i)
            .and_then(|name| facts.get(name))
            .copied()
            .unwrap_or(Facts::NONE)
    };
    let out_is_int = shapes
        .get(&node.outputs[0])
        .map(|info| info.dtype.is_int())
        .unwrap_or(false);
    match node.op {
        OpKind::Constant => node
            .attr_str("value")
            .and_then(|name| g.constants.get(name))
            .map(constant_facts)
            .unwrap_or(Facts::NONE),
        OpKind::Add => {
            let (a, b) = (input(0), input(1));
            Facts {
                nonneg: a.nonneg && b.nonneg,
                positive: (a.positive && b.nonneg) || (a.nonneg && b.positive),
                integral: a.integral && b.integral,
            }
        }
        OpKind::Sub => Facts {
            nonneg: false,
            positive: false,
            integral: input(0).integral && input(1).integral,
        },
        OpKind::Mul => {
            let (a, b) = (input(0), input(1));
            // Positive floats can underflow to zero; integral positives
            // cannot (they are at least one).
            let no_underflow = out_is_int || (a.integral && b.integral);
            Facts {
                nonneg: a.nonneg && b.nonneg,
                positive: a.positive && b.positive && no_underflow,
                integral: a.integral && b.integral,
            }
        }
        OpKind::Div => {
            let (a, b) = (input(0), input(1));
            Facts {
                nonneg: a.nonneg && b.positive,
                positive: false,
                integral: out_is_int,
            }
        }
        OpKind::Mod => {
            let (a, b) = (input(0), input(1));
            Facts {
                // Integer Mod follows the dividend sign; float Mod follows
                // the divisor sign, and lands in [0, b) for positive b.
                nonneg: if out_is_int { a.nonneg } else { a.nonneg && b.positive },
                positive: false,
                integral: a.integral && b.integral,
            }
        }
        OpKind::Floor => Facts {
            nonneg: input(0).nonneg,
            positive: false,
            integral: true,
        },
        OpKind::Neg => Facts {
            nonneg: false,
            positive: false,
            integral: input(0).integral,
        },
        OpKind::Relu => Facts {
            nonneg: true,
            positive: input(0).positive,
            integral: input(0).integral,
        },
        OpKind::Exp => Facts { nonneg: true, positive: false, integral: false },
        OpKind::Cast => {
            let a = input(0);
            let src_is_int = node
                .inputs
                .first()
                .and_then(|name| shapes.get(name))
                .map(|info| info.dtype.is_int())
                .unwrap_or(false);
            if out_is_int {
                Facts {
                    nonneg: a.nonneg,
                    // Truncation toward zero can turn a small positive float
                    // into zero unless the value was already an integer.
                    positive: a.positive && (src_is_int || a.integral),
                    integral: true,
                }
            } else {
                let to_f32 = matches!(
                    node.attr_str("to").and_then(DType::parse),
                    Some(DType::F32)
                );
                Facts {
                    nonneg: a.nonneg,
                    // Rounding to a narrower float can flush tiny positives
                    // to zero; integers at least one cannot get that small.
                    positive: a.positive && (a.integral || (src_is_int || to_f32)),
                    integral: a.integral && to_f32,
                }
            }
        }
        OpKind::MatMul | OpKind::Einsum | OpKind::Conv2d => {
            let (a, b) = (input(0), input(1));
            Facts {
                nonneg: a.nonneg && b.nonneg,
                positive: false,
                integral: a.integral && b.integral,
            }
        }
        OpKind::Transpose | OpKind::Reshape | OpKind::ReduceMax | OpKind::MaxPool2d
        | OpKind::MaxPool3d => input(0),
        OpKind::Concat => {
            let mut combined = input(0);
            for i in 1..node.inputs.len() {
                let f = input(i);
                combined = Facts {
                    nonneg: combined.nonneg && f.nonneg,
                    positive: combined.positive && f.positive,
                    integral: combined.integral && f.integral,
                };
            }
            combined
        }
        OpKind::ReduceSum => {
            let a = input(0);
            Facts {
                nonneg: a.nonneg,
                // A float sum of positives can round to zero after the final
                // narrowing; integer sums cannot.
                positive: a.positive && out_is_int,
                integral: a.integral,
            }
        }
        OpKind::Softmax => Facts { nonneg: true, positive: false, integral: false },
    }
}

/// Computes facts for every tensor in the graph, walking nodes in
/// topological order. Call with the graph's inferred shapes.
pub fn analyze(g: &Graph, shapes: &ShapeMap) -> FactMap {
    let mut facts = FactMap::new();
    for spec in &g.inputs {
        facts.insert(spec.name.clone(), input_facts(spec.dtype, spec.range));
    }
    let order = match g.topo_order() {
        Ok(order) => order,
        Err(_) => return facts,
    };
    for ni in order {
        let node = &g.nodes[ni];
        let f = node_facts(g, shapes, node, &facts);
        facts.insert(node.outputs[0].clone(), f);
    }
    facts
}
