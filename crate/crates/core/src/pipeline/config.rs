//! Project configuration (`portir.project.json`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::PrecisionMode;
use crate::interp::compare::Tolerance;

pub const CONFIG_FILE: &str = "portir.project.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid project config: {0}")]
    Parse(String),
    #[error("invalid project config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub enabled: bool,
    pub mode: PrecisionMode,
    pub calibration_count: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            enabled: false,
            mode: PrecisionMode::W8A8,
            calibration_count: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    /// Serialized-model validation (stage 2).
    pub validation: Tolerance,
    /// FP16 backend alignment (stage 4).
    pub fp16: Tolerance,
    /// Quantized backend alignment (stage 5).
    pub quant: Tolerance,
    /// Rewrite equivalence trials inside the build stage.
    pub equivalence: Tolerance,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            validation: Tolerance::new(1e-5, 1e-4),
            fp16: Tolerance::new(1e-3, 1e-2),
            quant: Tolerance::new(0.05, 0.05),
            equivalence: Tolerance::new(1e-7, 1e-6),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Model file, relative to the project root.
    pub model: String,
    /// Capability profile: a built-in name or a file path.
    pub profile: String,
    #[serde(default = "default_precision_mode")]
    pub precision_mode: PrecisionMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Baseline sample count (stage 1).
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    /// Repair attempts allowed per diagnostic signature (stage 3).
    #[serde(default = "default_retry_bound")]
    pub retry_bound: u32,
    #[serde(default = "default_equivalence_trials")]
    pub equivalence_trials: usize,
    /// Symbolic dim bindings applied before execution.
    #[serde(default)]
    pub bindings: BTreeMap<String, u64>,
    #[serde(default)]
    pub quant: QuantConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    /// Knowledge-base file override; default is `~/.portir/kb.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_path: Option<String>,
}

fn default_precision_mode() -> PrecisionMode {
    PrecisionMode::Fp16
}

fn default_seed() -> u64 {
    42
}

fn default_sample_count() -> usize {
    4
}

fn default_retry_bound() -> u32 {
    3
}

fn default_equivalence_trials() -> usize {
    8
}

impl ProjectConfig {
    pub fn new(model: impl Into<String>, profile: impl Into<String>) -> ProjectConfig {
        ProjectConfig {
            model: model.into(),
            profile: profile.into(),
            precision_mode: default_precision_mode(),
            seed: default_seed(),
            sample_count: default_sample_count(),
            retry_bound: default_retry_bound(),
            equivalence_trials: default_equivalence_trials(),
            bindings: BTreeMap::new(),
            quant: QuantConfig::default(),
            tolerances: ToleranceConfig::default(),
            kb_path: None,
        }
    }

    /// Semantic checks beyond what serde enforces.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.model.trim().is_empty() {
            return Err(ConfigError::Invalid("model path is empty".into()));
        }
        if self.profile.trim().is_empty() {
            return Err(ConfigError::Invalid("profile is empty".into()));
        }
        if self.precision_mode.is_quantized() {
            return Err(ConfigError::Invalid(format!(
                "precision_mode {} is quantized; quantized modes are configured under \"quant\"",
                self.precision_mode
            )));
        }
        if !self.quant.mode.is_quantized() {
            return Err(ConfigError::Invalid(format!(
                "quant.mode must be a quantized mode, got {}",
                self.quant.mode
            )));
        }
        if self.sample_count == 0 {
            return Err(ConfigError::Invalid("sample_count must be at least 1".into()));
        }
        if self.retry_bound == 0 {
            return Err(ConfigError::Invalid("retry_bound must be at least 1".into()));
        }
        if self.equivalence_trials == 0 {
            return Err(ConfigError::Invalid(
                "equivalence_trials must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ProjectConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ProjectConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
