//! Randomized behavioral comparison of two graphs with equal interfaces.
//!
//! Used to gate every rewrite: the rewritten graph must reproduce the
//! original's behavior on seeded random feeds before it replaces it.
//! Integer outputs must match exactly; float outputs are held to the
//! configured tolerance. Trials where both graphs fail in the same way
//! (same error kind) count as agreement, since the rewrite preserved the
//! observable behavior.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedgen::{gen_feed_sets, FeedGenError};
use crate::interp::compare::{compare, Tolerance};
use crate::interp::{create_session, Boundary, SessionError, TensorMap};
use crate::ir::{DTypeClass, Graph};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: Tolerance,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            trials: 8,
            seed: 42,
            tolerance: Tolerance::new(1e-7, 1e-6),
        }
    }
}

#[derive(Debug, Error)]
pub enum EquivalenceError {
    #[error("graphs expose different interfaces and cannot be compared")]
    SignatureMismatch,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    FeedGen(#[from] FeedGenError),
}

/// One disagreeing trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub passed: bool,
    pub trials: usize,
    /// Worst float deviations over trials where both graphs produced values.
    pub max_abs: f64,
    pub max_rel: f64,
    pub failures: Vec<TrialFailure>,
}

fn split_by_class(map: &TensorMap) -> (TensorMap, TensorMap) {
    let mut floats = TensorMap::new();
    let mut ints = TensorMap::new();
    for (name, value) in map {
        match value.dtype().class() {
            DTypeClass::Float => floats.insert(name.clone(), value.clone()),
            DTypeClass::Int => ints.insert(name.clone(), value.clone()),
        };
    }
    (floats, ints)
}

/// Runs `before` and `after` on `cfg.trials` seeded random feed sets and
/// reports whether every trial agreed.
pub fn verify_equivalence(
    before: &Graph,
    after: &Graph,
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport, EquivalenceError> {
    if before.io_signature() != after.io_signature() {
        return Err(EquivalenceError::SignatureMismatch);
    }
    let base = create_session(before, Boundary::Identity)?;
    let cand = create_session(after, Boundary::Identity)?;
    let feed_sets = gen_feed_sets(&before.inputs, cfg.seed, cfg.trials)?;

    let mut failures = Vec::new();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (trial, feeds) in feed_sets.iter().enumerate() {
        match (base.run(feeds), cand.run(feeds)) {
            (Ok(expected), Ok(got)) => {
                let (float_e, int_e) = split_by_class(&expected);
                let (float_g, int_g) = split_by_class(&got);
                let float_report = compare(&float_e, &float_g, &cfg.tolerance);
                let int_report = compare(&int_e, &int_g, &Tolerance::EXACT);
                max_abs = max_abs.max(float_report.worst_abs());
                max_rel = max_rel.max(float_report.worst_rel());
                for report in [&float_report, &int_report] {
                    if report.passed {
                        continue;
                    }
                    for out in report.outputs.iter().filter(|o| !o.passed) {
                        let what = out
                            .first_failure
                            .clone()
                            .or_else(|| out.note.clone())
                            .unwrap_or_else(|| "outputs differ".to_string());
                        failures.push(TrialFailure {
                            trial,
                            detail: format!("output {}: {what}", out.name),
                        });
                    }
                }
            }
            (Err(e1), Err(e2)) => {
                if std::mem::discriminant(&e1) != std::mem::discriminant(&e2) {
                    failures.push(TrialFailure {
                        trial,
                        detail: format!("different failure kinds: {e1} vs {e2}"),
                    });
                }
            }
            (Ok(_), Err(e)) => failures.push(TrialFailure {
                trial,
                detail: format!("rewritten graph failed where the original ran: {e}"),
            }),
            (Err(e), Ok(_)) => failures.push(TrialFailure {
                trial,
                detail: format!("original failed where the rewritten graph ran: {e}"),
            }),
        }
    }
    Ok(EquivalenceReport {
        passed: failures.is_empty(),
        trials: cfg.trials,
        max_abs,
        max_rel,
        failures,
    })
}
