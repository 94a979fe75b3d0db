//! The six-stage porting pipeline.
//!
//! A project directory owns one model port: its config, an append-only
//! stage ledger, the golden baseline captured at stage 1, build artifacts,
//! and the final deployment report. Stages run strictly in order; a stage
//! executes only when every predecessor is complete, re-running a complete
//! stage is a no-op, and changing the model file on disk invalidates all
//! recorded progress.
//!
//! Stage outcomes are data, not errors: a stage that runs to a verdict
//! returns `Ok(StageOutcome)` whether it passed or failed, and the verdict
//! is recorded in the ledger. The `Err` path is reserved for conditions
//! outside the model's content: ordering violations, lock contention, and
//! unusable pipeline state.

pub mod config;
pub mod kb;
pub mod ledger;
pub mod report;
mod stages;
pub mod tensordir;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::capability::Diagnostic;
use crate::interp::compare::AlignmentReport;
use crate::ir::io::{graph_sha256, load_graph};
use crate::ir::{Dim, Graph, TensorSpec};

pub use config::{ConfigError, ProjectConfig, QuantConfig, ToleranceConfig, CONFIG_FILE};
pub use kb::{default_kb_path, KbError, KnowledgeBase};
pub use ledger::{unix_now, Ledger, LedgerEntry, StageId, StageStatus};
pub use report::DeploymentReport;

pub const LEDGER_FILE: &str = "portir.ledger.json";
pub const LOCK_FILE: &str = "portir.lock";
pub const BASELINE_DIR: &str = "baseline";
pub const BASELINE_MANIFEST: &str = "manifest.json";
pub const ARTIFACTS_DIR: &str = "artifacts";
pub const CALIBRATION_DIR: &str = "calibration";
pub const REPORT_DIR: &str = "report";
pub const BUILT_GRAPH_FILE: &str = "built.pir.json";
pub const RECEIPTS_FILE: &str = "receipts.json";
pub const INTERVENTIONS_FILE: &str = "interventions.json";
pub const KB_DELTAS_FILE: &str = "kb_deltas.json";
pub const NODE_PROFILE_FILE: &str = "node_profile.json";
pub const QUANT_PARAMS_FILE: &str = "quant_params.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{root} is not a portir project (missing {CONFIG_FILE})")]
    NotAProject { root: String },
    #[error("refusing to initialize {root}: directory is not empty")]
    DirNotEmpty { root: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("another pipeline execution holds the lock {path}")]
    Locked { path: String },
    #[error("{stage} may not run yet: {blocking} is not complete")]
    OutOfOrder { stage: StageId, blocking: StageId },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unusable pipeline state in {path}: {detail}")]
    State { path: String, detail: String },
}

/// Verdict of one stage execution.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: StageId,
    pub status: StageStatus,
    pub detail: String,
}

/// One repair attempt inside the build stage, with its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub signature: String,
    pub pass_id: String,
    pub outcome: String,
}

/// What a human needs when the pipeline gives up: the diagnostics it could
/// not discharge and everything it tried.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub stage: StageId,
    pub diagnostics: Vec<Diagnostic>,
    pub attempts: Vec<AttemptRecord>,
    pub message: String,
}

/// One knowledge-base writeback performed by a build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbDelta {
    pub signature: String,
    pub pass_id: String,
    pub success: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSample {
    pub feed_dir: String,
    pub feed_sha256: String,
    pub output_dir: String,
    pub output_sha256: String,
}

/// Index of the golden baseline: where each sample lives and the content
/// hashes that later stages verify before trusting the bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineManifest {
    pub model_sha256: String,
    pub seed: u64,
    pub sample_count: usize,
    pub io: IoManifest,
    pub samples: Vec<BaselineSample>,
}

/// Human-readable io signature, one `name:dtype[dims]` entry per tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoManifest {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn spec_summary(spec: &TensorSpec) -> String {
    let dims: Vec<String> = spec
        .shape
        .iter()
        .map(|d| match d {
            Dim::Static(n) => n.to_string(),
            Dim::Symbolic(s) => s.clone(),
        })
        .collect();
    format!("{}:{}[{}]", spec.name, spec.dtype, dims.join(","))
}

impl IoManifest {
    pub fn of(graph: &Graph) -> IoManifest {
        IoManifest {
            inputs: graph.inputs.iter().map(spec_summary).collect(),
            outputs: graph.outputs.iter().map(spec_summary).collect(),
        }
    }
}

/// Size accounting for one node of the built graph, captured during the
/// alignment stage. Wall-clock durations are deliberately left out so the
/// stored form is reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeProfileRow {
    pub node_id: String,
    pub op: String,
    pub output_elements: u64,
}

/// One capability diagnostic paired with the passes that could address it,
/// for preview displays.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticPreview {
    pub diagnostic: Diagnostic,
    pub candidate_passes: Vec<String>,
}

/// Per-sample alignment results of one comparison stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentDoc {
    pub samples: Vec<AlignmentReport>,
}

impl AlignmentDoc {
    pub fn passed(&self) -> bool {
        self.samples.iter().all(|r| r.passed)
    }

    pub fn worst_abs(&self) -> f64 {
        self.samples.iter().map(AlignmentReport::worst_abs).fold(0.0, f64::max)
    }

    pub fn worst_rel(&self) -> f64 {
        self.samples.iter().map(AlignmentReport::worst_rel).fold(0.0, f64::max)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("pipeline documents serialize");
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an optional pipeline-owned JSON document; a missing file yields the
/// provided default, anything unparseable is an error.
pub(crate) fn read_json_or<T: DeserializeOwned>(
    path: &Path,
    default: impl FnOnce() -> T,
) -> Result<T, PipelineError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(default()),
        Err(source) => {
            return Err(PipelineError::Io {
                path: path.display().to_string(),
                source,
            });
        }
    };
    serde_json::from_str(&text).map_err(|e| PipelineError::State {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Exclusive per-project execution lock, released on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(path: PathBuf) -> Result<LockGuard, PipelineError> {
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = write!(file, "{}\n", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked {
                path: path.display().to_string(),
            }),
            Err(source) => Err(PipelineError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// An opened project directory.
#[derive(Debug)]
pub struct Project {
    pub root: PathBuf,
    pub config: ProjectConfig,
    pub ledger: Ledger,
    /// Knowledge-base location override (from a flag or the environment);
    /// takes precedence over the config and the built-in default.
    pub kb_override: Option<PathBuf>,
}

impl Project {
    /// Creates a new project: the directory must be empty (or absent), and
    /// gets the config file written into it.
    pub fn init(root: &Path, config: ProjectConfig) -> Result<Project, PipelineError> {
        config.check()?;
        std::fs::create_dir_all(root).map_err(|source| PipelineError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let mut entries = std::fs::read_dir(root).map_err(|source| PipelineError::Io {
            path: root.display().to_string(),
            source,
        })?;
        if entries.next().is_some() {
            return Err(PipelineError::DirNotEmpty {
                root: root.display().to_string(),
            });
        }
        config.save(&root.join(CONFIG_FILE))?;
        Project::open(root)
    }

    /// Opens an existing project, reconciling the ledger with the model
    /// file: when the model's content hash changed since the last run, all
    /// recorded progress is invalidated (appended as `pending` entries, so
    /// the history survives).
    pub fn open(root: &Path) -> Result<Project, PipelineError> {
        let config_path = root.join(CONFIG_FILE);
        if !config_path.exists() {
            return Err(PipelineError::NotAProject {
                root: root.display().to_string(),
            });
        }
        let config = ProjectConfig::load(&config_path)?;
        let ledger_path = root.join(LEDGER_FILE);
        let ledger = read_json_or(&ledger_path, || Ledger::new(""))?;
        let mut project = Project {
            root: root.to_path_buf(),
            config,
            ledger,
            kb_override: None,
        };
        project.sync_model_hash();
        Ok(project)
    }

    /// Invalidates recorded progress when the model file's canonical hash no
    /// longer matches the ledger. An unloadable model file is left for the
    /// stages themselves to report.
    fn sync_model_hash(&mut self) {
        let Ok(graph) = load_graph(&self.model_path()) else {
            return;
        };
        let hash = graph_sha256(&graph);
        if self.ledger.model_sha256 == hash {
            return;
        }
        let stale: Vec<StageId> = StageId::ALL
            .into_iter()
            .filter(|&s| self.ledger.status(s) != StageStatus::Pending)
            .collect();
        for stage in stale {
            self.ledger.record(
                stage,
                StageStatus::Pending,
                "model changed on disk; stage invalidated",
            );
        }
        self.ledger.model_sha256 = hash;
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join(&self.config.model)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join(LEDGER_FILE)
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(LOCK_FILE)
    }

    pub fn baseline_dir(&self) -> PathBuf {
        self.root.join(BASELINE_DIR)
    }

    pub fn baseline_manifest_path(&self) -> PathBuf {
        self.baseline_dir().join(BASELINE_MANIFEST)
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.root.join(ARTIFACTS_DIR)
    }

    pub fn built_graph_path(&self) -> PathBuf {
        self.artifacts_dir().join(BUILT_GRAPH_FILE)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join(REPORT_DIR)
    }

    pub fn receipts_path(&self) -> PathBuf {
        self.root.join(RECEIPTS_FILE)
    }

    pub fn interventions_path(&self) -> PathBuf {
        self.root.join(INTERVENTIONS_FILE)
    }

    pub fn alignment_path(&self, stage: StageId) -> PathBuf {
        let tag = match stage {
            StageId::Align => "fp16",
            StageId::Quantize => "quant",
            other => other.name(),
        };
        self.artifacts_dir().join(format!("alignment_{tag}.json"))
    }

    /// Knowledge-base location: override, then config, then `~/.portir`.
    pub fn kb_path(&self) -> PathBuf {
        if let Some(path) = &self.kb_override {
            return path.clone();
        }
        if let Some(path) = &self.config.kb_path {
            return self.root.join(path);
        }
        default_kb_path()
    }

    fn save_ledger(&self) -> Result<(), PipelineError> {
        write_json(&self.ledger_path(), &self.ledger)
    }

    /// Records a stage verdict in the ledger and persists it.
    fn record(
        &mut self,
        stage: StageId,
        status: StageStatus,
        detail: impl Into<String>,
    ) -> Result<StageOutcome, PipelineError> {
        let detail = detail.into();
        self.ledger.record(stage, status, detail.clone());
        self.save_ledger()?;
        Ok(StageOutcome { stage, status, detail })
    }

    /// Runs one stage. A complete stage is not re-executed; a stage whose
    /// predecessors are incomplete is refused.
    pub fn run_stage(&mut self, stage: StageId) -> Result<StageOutcome, PipelineError> {
        let current = self.ledger.status(stage);
        if current.is_complete() {
            return Ok(StageOutcome {
                stage,
                status: current,
                detail: format!("already {current}; not re-run"),
            });
        }
        if let Some(blocking) = self.ledger.blocking_stage(stage) {
            return Err(PipelineError::OutOfOrder { stage, blocking });
        }
        let _lock = LockGuard::acquire(self.lock_path())?;
        self.execute_stage(stage)
    }

    /// Runs every remaining stage in order, halting at the first one that
    /// does not complete. Re-invocation resumes where the last run stopped
    /// and is a no-op once everything is complete.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>, PipelineError> {
        let _lock = LockGuard::acquire(self.lock_path())?;
        let mut outcomes = Vec::new();
        while let Some(stage) = self.ledger.first_incomplete() {
            let outcome = self.execute_stage(stage)?;
            let complete = outcome.status.is_complete();
            outcomes.push(outcome);
            if !complete {
                break;
            }
        }
        Ok(outcomes)
    }

    fn execute_stage(&mut self, stage: StageId) -> Result<StageOutcome, PipelineError> {
        match stage {
            StageId::Baseline => self.stage_baseline(),
            StageId::Validate => self.stage_validate(),
            StageId::Build => self.stage_build(),
            StageId::Align => self.stage_align(),
            StageId::Quantize => self.stage_quantize(),
            StageId::Report => self.stage_report(),
        }
    }

    /// Current ledger view, for status displays.
    pub fn stage_statuses(&self) -> BTreeMap<StageId, StageStatus> {
        self.ledger.current()
    }
}
