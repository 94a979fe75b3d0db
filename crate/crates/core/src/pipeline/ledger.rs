//! Append-only stage ledger with a derived current-status view.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    Baseline,
    Validate,
    Build,
    Align,
    Quantize,
    Report,
}

impl StageId {
    pub const ALL: [StageId; 6] = [
        StageId::Baseline,
        StageId::Validate,
        StageId::Build,
        StageId::Align,
        StageId::Quantize,
        StageId::Report,
    ];

    pub fn number(self) -> u8 {
        match self {
            StageId::Baseline => 1,
            StageId::Validate => 2,
            StageId::Build => 3,
            StageId::Align => 4,
            StageId::Quantize => 5,
            StageId::Report => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageId::Baseline => "baseline",
            StageId::Validate => "validate",
            StageId::Build => "build",
            StageId::Align => "align",
            StageId::Quantize => "quantize",
            StageId::Report => "report",
        }
    }

    /// Stages that must be complete before this one may run.
    pub fn predecessors(self) -> &'static [StageId] {
        let n = self.number() as usize;
        &StageId::ALL[..n - 1]
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{} ({})", self.number(), self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Passed,
    Failed,
    InterventionRequired,
    Skipped,
}

impl StageStatus {
    /// Whether this status unblocks successor stages. Skipped is the
    /// passed-equivalent recorded when the optional quantization stage is
    /// disabled.
    pub fn is_complete(self) -> bool {
        matches!(self, StageStatus::Passed | StageStatus::Skipped)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Pending => "pending",
            StageStatus::Passed => "passed",
            StageStatus::Failed => "failed",
            StageStatus::InterventionRequired => "intervention_required",
            StageStatus::Skipped => "skipped",
        }
    }
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: StageId,
    pub status: StageStatus,
    pub detail: String,
    /// Unix seconds; informational only, never part of deterministic output.
    pub timestamp: u64,
}

/// Per-project stage history. The history is append-only; the current view
/// is the last entry per stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ledger {
    pub model_sha256: String,
    pub history: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn new(model_sha256: impl Into<String>) -> Ledger {
        Ledger {
            model_sha256: model_sha256.into(),
            history: Vec::new(),
        }
    }

    pub fn status(&self, stage: StageId) -> StageStatus {
        self.history
            .iter()
            .rev()
            .find(|e| e.stage == stage)
            .map(|e| e.status)
            .unwrap_or(StageStatus::Pending)
    }

    pub fn current(&self) -> BTreeMap<StageId, StageStatus> {
        StageId::ALL.iter().map(|&s| (s, self.status(s))).collect()
    }

    pub fn record(&mut self, stage: StageId, status: StageStatus, detail: impl Into<String>) {
        self.history.push(LedgerEntry {
            stage,
            status,
            detail: detail.into(),
            timestamp: unix_now(),
        });
    }

    /// First predecessor of `stage` that is not complete, if any.
    pub fn blocking_stage(&self, stage: StageId) -> Option<StageId> {
        stage
            .predecessors()
            .iter()
            .copied()
            .find(|&p| !self.status(p).is_complete())
    }

    /// First stage that still needs work, in order.
    pub fn first_incomplete(&self) -> Option<StageId> {
        StageId::ALL
            .iter()
            .copied()
            .find(|&s| !self.status(s).is_complete())
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
