//! Core library of the portir model-porting toolchain.
//!
//! The crate is organized around the lifecycle of porting a model from a
//! source framework export to a constrained deployment target:
//!
//! - [`ir`]: the small tensor-graph dialect everything operates on, plus
//!   validation, shape inference, and the on-disk model format
//! - [`interp`]: the reference interpreter and output comparison
//! - [`capability`]: target capability profiles and compatibility checking
//! - [`surgery`]: graph rewrite passes, shape binding, equivalence checking,
//!   and repair planning
//! - [`backend`]: compilation to target artifacts and execution under target
//!   numerics (binary16, fake quantization)
//! - [`pipeline`]: the staged porting workflow with a persistent ledger,
//!   bounded repair retries, and a pass-outcome knowledge base
//! - [`toys`]: small built-in models exercising the interesting cases
//! - [`feedgen`]: deterministic random feed generation

pub mod backend;
pub mod capability;
pub mod feedgen;
pub mod interp;
pub mod ir;
pub mod pipeline;
pub mod surgery;
pub mod toys;

pub use capability::{check_compatibility, Diagnostic, DiagnosticKind, PrecisionMode, Profile};
pub use interp::{compare::compare, compare::Tolerance, create_session, Boundary, Session, TensorMap};
pub use ir::{DType, Dim, Graph, Node, OpKind, TensorSpec, TensorValue};
