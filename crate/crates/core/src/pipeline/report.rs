//! Deployment report generation.
//!
//! The report is assembled purely from the ledger and the files the earlier
//! stages stored, so regenerating it reproduces the same bytes. The JSON
//! form carries no wall-clock values at all; the markdown rendering adds
//! ledger timestamps for the human reader.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::backend::load_artifact;
use crate::capability::PrecisionMode;

use super::ledger::{Ledger, StageId, StageStatus};
use super::{
    read_json_or, write_json, write_text, AlignmentDoc, BaselineManifest, InterventionRecord,
    KbDelta, NodeProfileRow, PipelineError, Project, ARTIFACTS_DIR, KB_DELTAS_FILE,
    NODE_PROFILE_FILE,
};
use crate::surgery::PassReceipt;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: StageId,
    pub status: StageStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactSummary {
    pub file: String,
    pub profile: String,
    pub mode: PrecisionMode,
    pub graph_sha256: String,
}

/// Everything a reviewer needs about a completed port, in one document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentReport {
    pub model: String,
    pub model_sha256: String,
    pub profile: String,
    pub precision_mode: PrecisionMode,
    pub seed: u64,
    pub stages: Vec<StageSummary>,
    pub baseline: BaselineManifest,
    pub receipts: Vec<PassReceipt>,
    pub interventions: Vec<InterventionRecord>,
    pub kb_deltas: Vec<KbDelta>,
    pub validation: AlignmentDoc,
    pub fp16_alignment: AlignmentDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quant_alignment: Option<AlignmentDoc>,
    pub node_profile: Vec<NodeProfileRow>,
    pub artifacts: Vec<ArtifactSummary>,
}

fn read_required<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::State {
        path: path.display().to_string(),
        detail: format!("missing or unreadable: {e}"),
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::State {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

impl Project {
    pub fn report_json_path(&self) -> PathBuf {
        self.report_dir().join(REPORT_JSON)
    }

    pub fn report_md_path(&self) -> PathBuf {
        self.report_dir().join(REPORT_MD)
    }

    /// Assembles the report from stored state. Requires a project whose
    /// stages have all completed (the report stage enforces that).
    pub fn build_report(&self) -> Result<DeploymentReport, PipelineError> {
        let stages: Vec<StageSummary> = StageId::ALL
            .into_iter()
            .map(|stage| {
                let entry = self.ledger.history.iter().rev().find(|e| e.stage == stage);
                StageSummary {
                    stage,
                    status: entry.map(|e| e.status).unwrap_or(StageStatus::Pending),
                    detail: entry.map(|e| e.detail.clone()).unwrap_or_default(),
                }
            })
            .collect();

        let baseline: BaselineManifest = read_required(&self.baseline_manifest_path())?;
        let receipts: Vec<PassReceipt> = read_json_or(&self.receipts_path(), Vec::new)?;
        let interventions: Vec<InterventionRecord> =
            read_json_or(&self.interventions_path(), Vec::new)?;
        let kb_deltas: Vec<KbDelta> =
            read_json_or(&self.artifacts_dir().join(KB_DELTAS_FILE), Vec::new)?;
        let node_profile: Vec<NodeProfileRow> =
            read_json_or(&self.artifacts_dir().join(NODE_PROFILE_FILE), Vec::new)?;
        let validation: AlignmentDoc = read_required(&self.alignment_path(StageId::Validate))?;
        let fp16_alignment: AlignmentDoc = read_required(&self.alignment_path(StageId::Align))?;
        let quantized = self.ledger.status(StageId::Quantize) == StageStatus::Passed;
        let quant_alignment: Option<AlignmentDoc> = if quantized {
            Some(read_required(&self.alignment_path(StageId::Quantize))?)
        } else {
            None
        };

        let profile = self.load_profile().map_err(|detail| PipelineError::State {
            path: self.config.profile.clone(),
            detail,
        })?;
        let mut artifact_files = vec![self.artifact_path(&profile.name, self.config.precision_mode)];
        if quantized {
            artifact_files.push(self.artifact_path(&profile.name, self.config.quant.mode));
        }
        let mut artifacts = Vec::with_capacity(artifact_files.len());
        for path in artifact_files {
            let artifact = load_artifact(&path).map_err(|e| PipelineError::State {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            let file = path
                .file_name()
                .map(|n| format!("{ARTIFACTS_DIR}/{}", n.to_string_lossy()))
                .unwrap_or_default();
            artifacts.push(ArtifactSummary {
                file,
                profile: artifact.profile,
                mode: artifact.mode,
                graph_sha256: artifact.graph_sha256,
            });
        }

        Ok(DeploymentReport {
            model: self.config.model.clone(),
            model_sha256: baseline.model_sha256.clone(),
            profile: self.config.profile.clone(),
            precision_mode: self.config.precision_mode,
            seed: self.config.seed,
            stages,
            baseline,
            receipts,
            interventions,
            kb_deltas,
            validation,
            fp16_alignment,
            quant_alignment,
            node_profile,
            artifacts,
        })
    }

    /// Writes `report/report.json` and `report/report.md`.
    pub fn generate_report_files(&self) -> Result<(), PipelineError> {
        let report = self.build_report()?;
        write_json(&self.report_json_path(), &report)?;
        write_text(&self.report_md_path(), &render_markdown(&report, &self.ledger))
    }
}

/// Unix seconds to a `YYYY-MM-DD hh:mm:ss UTC` string, for the markdown
/// rendering only. Uses the standard civil-from-days date conversion.
pub(crate) fn format_utc(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!("{year:04}-{month:02}-{day:02} {hh:02}:{mm:02}:{ss:02} UTC")
}

fn alignment_table(out: &mut String, doc: &AlignmentDoc) {
    out.push_str("| sample | output | max abs | max rel | status |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (i, report) in doc.samples.iter().enumerate() {
        for output in &report.outputs {
            let status = if output.passed { "ok" } else { "FAILED" };
            out.push_str(&format!(
                "| {i} | {} | {:.3e} | {:.3e} | {status} |\n",
                output.name, output.max_abs, output.max_rel
            ));
        }
    }
}

/// Renders the human-readable companion to the JSON report.
pub fn render_markdown(report: &DeploymentReport, ledger: &Ledger) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Deployment report: {}\n\n", report.model));
    out.push_str(&format!(
        "Model `{}` (sha256 `{}`), profile `{}`, precision mode {}, seed {}.\n\n",
        report.model, report.model_sha256, report.profile, report.precision_mode, report.seed
    ));

    out.push_str("## Stages\n\n");
    out.push_str("| stage | status | recorded | detail |\n|---|---|---|---|\n");
    for summary in &report.stages {
        let recorded = ledger
            .history
            .iter()
            .rev()
            .find(|e| e.stage == summary.stage)
            .map(|e| format_utc(e.timestamp))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            summary.stage, summary.status, recorded, summary.detail
        ));
    }
    out.push('\n');

    out.push_str("## Baseline\n\n");
    out.push_str(&format!(
        "{} samples captured at seed {}.\n\nInputs: {}\n\nOutputs: {}\n\n",
        report.baseline.sample_count,
        report.baseline.seed,
        codelist(&report.baseline.io.inputs),
        codelist(&report.baseline.io.outputs),
    ));

    out.push_str("## Graph changes\n\n");
    if report.receipts.is_empty() {
        out.push_str("No changes were needed.\n\n");
    } else {
        for receipt in &report.receipts {
            let mut line = format!("- `{}`", receipt.pass_id);
            if receipt.signature != "-" {
                line.push_str(&format!(" for `{}`", receipt.signature));
            }
            if let Some(detail) = &receipt.detail {
                line.push_str(&format!(": {detail}"));
            }
            if !receipt.removed.is_empty() {
                line.push_str(&format!(": removed {}", codelist(&receipt.removed)));
                line.push_str(&format!("; added {}", codelist(&receipt.added)));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("## Interventions\n\n");
    if report.interventions.is_empty() {
        out.push_str("None.\n\n");
    } else {
        for record in &report.interventions {
            out.push_str(&format!("### {}\n\n{}\n\n", record.stage, record.message));
            for diag in &record.diagnostics {
                out.push_str(&format!("- {diag}\n"));
            }
            if !record.attempts.is_empty() {
                out.push_str("\n| signature | pass | outcome |\n|---|---|---|\n");
                for attempt in &record.attempts {
                    out.push_str(&format!(
                        "| {} | {} | {} |\n",
                        attempt.signature, attempt.pass_id, attempt.outcome
                    ));
                }
            }
            out.push('\n');
        }
    }

    out.push_str("## Alignment\n\n### Serialized-model validation\n\n");
    alignment_table(&mut out, &report.validation);
    out.push_str("\n### FP16 backend\n\n");
    alignment_table(&mut out, &report.fp16_alignment);
    out.push_str("\n### Quantization\n\n");
    match &report.quant_alignment {
        Some(doc) => {
            alignment_table(&mut out, doc);
            out.push('\n');
        }
        None => {
            let detail = report
                .stages
                .iter()
                .find(|s| s.stage == StageId::Quantize)
                .map(|s| s.detail.clone())
                .unwrap_or_default();
            out.push_str(&format!("Skipped: {detail}\n\n"));
        }
    }

    out.push_str("## Knowledge-base updates\n\n");
    if report.kb_deltas.is_empty() {
        out.push_str("None.\n\n");
    } else {
        for delta in &report.kb_deltas {
            let what = if delta.success { "success" } else { "failure" };
            out.push_str(&format!("- `{}` with `{}`: {what}\n", delta.signature, delta.pass_id));
        }
        out.push('\n');
    }

    out.push_str("## Node profile\n\n");
    if report.node_profile.is_empty() {
        out.push_str("Not captured.\n\n");
    } else {
        out.push_str("| node | op | output elements |\n|---|---|---|\n");
        for row in &report.node_profile {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                row.node_id, row.op, row.output_elements
            ));
        }
        out.push('\n');
    }

    out.push_str("## Artifacts\n\n");
    for artifact in &report.artifacts {
        out.push_str(&format!(
            "- `{}`: profile `{}`, mode {}, graph `{}`\n",
            artifact.file, artifact.profile, artifact.mode, artifact.graph_sha256
        ));
    }
    out
}

fn codelist(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".to_string();
    }
    items
        .iter()
        .map(|i| format!("`{i}`"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utc_formatting_matches_known_instants() {
        assert_eq!(format_utc(0), "1970-01-01 00:00:00 UTC");
        assert_eq!(format_utc(1_000_000_000), "2001-09-09 01:46:40 UTC");
        // Leap-year day.
        assert_eq!(format_utc(1_709_164_800), "2024-02-29 00:00:00 UTC");
    }
}
