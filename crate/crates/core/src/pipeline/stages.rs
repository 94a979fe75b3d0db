//! The six stage bodies.
//!
//! Each stage runs to a verdict (`Passed`, `Failed`, `InterventionRequired`,
//! or `Skipped`) that gets recorded in the ledger; only environmental
//! problems (unwritable state, a corrupt knowledge base) escape as errors.

use std::collections::{BTreeMap, BTreeSet};

use crate::backend::quant::calibrate;
use crate::backend::{compile, load_artifact, save_artifact, ARTIFACT_EXTENSION};
use crate::capability::{check_compatibility, resolve_profile, PrecisionMode, Profile};
use crate::feedgen::{derive_seed, gen_feed_sets};
use crate::interp::compare::compare;
use crate::interp::{create_session, Boundary, TensorMap};
use crate::ir::io::{graph_sha256, load_graph, save_graph};
use crate::ir::Graph;
use crate::surgery::bind::{bind_all, bind_shapes};
use crate::surgery::equivalence::{verify_equivalence, EquivalenceConfig};
use crate::surgery::{find_pass, interface_preserved, plan_repairs, PassReceipt};

use super::kb::{KbError, KnowledgeBase};
use super::ledger::{unix_now, StageId, StageStatus};
use super::tensordir::{read_tensor_dir, tensor_dir_sha256, write_tensor_dir};
use super::{
    write_json, AlignmentDoc, AttemptRecord, BaselineManifest, BaselineSample, DiagnosticPreview,
    InterventionRecord, IoManifest, KbDelta, NodeProfileRow, PipelineError, Project, StageOutcome,
    CALIBRATION_DIR, KB_DELTAS_FILE, NODE_PROFILE_FILE, QUANT_PARAMS_FILE, REPORT_DIR,
};

/// Hard ceiling on applied rewrites per build, protecting against a pass
/// set that keeps producing repairable diagnostics without converging. The
/// per-diagnostic retry bound handles ordinary failure; this only trips on
/// a pathological rewrite cycle.
const MAX_REWRITES: usize = 1000;

/// Internal control flow for stage bodies: either a recorded verdict short
/// of `Passed`, or an environmental error to propagate.
enum StageError {
    Halt(StageStatus, String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for StageError {
    fn from(e: PipelineError) -> Self {
        StageError::Pipeline(e)
    }
}

impl From<KbError> for StageError {
    fn from(e: KbError) -> Self {
        StageError::Pipeline(PipelineError::Kb(e))
    }
}

fn fail(detail: impl Into<String>) -> StageError {
    StageError::Halt(StageStatus::Failed, detail.into())
}

type StageResult = Result<String, StageError>;

impl Project {
    fn finish(&mut self, stage: StageId, result: StageResult) -> Result<StageOutcome, PipelineError> {
        match result {
            Ok(detail) => self.record(stage, StageStatus::Passed, detail),
            Err(StageError::Halt(status, detail)) => self.record(stage, status, detail),
            Err(StageError::Pipeline(e)) => Err(e),
        }
    }

    pub(super) fn stage_baseline(&mut self) -> Result<StageOutcome, PipelineError> {
        let result = self.baseline_inner();
        self.finish(StageId::Baseline, result)
    }

    pub(super) fn stage_validate(&mut self) -> Result<StageOutcome, PipelineError> {
        let result = self.validate_inner();
        self.finish(StageId::Validate, result)
    }

    pub(super) fn stage_build(&mut self) -> Result<StageOutcome, PipelineError> {
        let result = self.build_inner();
        self.finish(StageId::Build, result)
    }

    pub(super) fn stage_align(&mut self) -> Result<StageOutcome, PipelineError> {
        let result = self.align_inner();
        self.finish(StageId::Align, result)
    }

    pub(super) fn stage_quantize(&mut self) -> Result<StageOutcome, PipelineError> {
        let result = self.quantize_inner();
        self.finish(StageId::Quantize, result)
    }

    /// Stage 6 records its verdict first, then renders: the report includes
    /// the final ledger view, and rendering is a pure function of stored
    /// state, so a re-render reproduces the same bytes.
    pub(super) fn stage_report(&mut self) -> Result<StageOutcome, PipelineError> {
        let outcome = self.record(
            StageId::Report,
            StageStatus::Passed,
            format!("report generated at {REPORT_DIR}/report.json"),
        )?;
        self.generate_report_files()?;
        Ok(outcome)
    }

    // ------------------------------------------------------------------
    // Shared loading helpers. These return plain strings so stage bodies
    // can turn every problem with user-owned content into a Failed verdict.
    // ------------------------------------------------------------------

    pub(crate) fn load_profile(&self) -> Result<Profile, String> {
        if let Some(profile) = Profile::builtin(&self.config.profile) {
            return Ok(profile);
        }
        let in_root = self.root.join(&self.config.profile);
        let reference = if in_root.exists() {
            in_root.display().to_string()
        } else {
            self.config.profile.clone()
        };
        resolve_profile(&reference)
            .map_err(|e| format!("profile {} could not be resolved: {e}", self.config.profile))
    }

    fn load_source(&self) -> Result<Graph, String> {
        load_graph(&self.model_path())
            .map_err(|e| format!("failed to load model {}: {e}", self.config.model))
    }

    fn load_built(&self) -> Result<Graph, String> {
        load_graph(&self.built_graph_path())
            .map_err(|e| format!("built graph missing or unreadable ({e}); re-run the build stage"))
    }

    fn load_manifest(&self) -> Result<BaselineManifest, String> {
        let path = self.baseline_manifest_path();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("baseline manifest unreadable ({}): {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("baseline manifest corrupt: {e}"))
    }

    /// Loads the golden baseline, verifying every sample directory against
    /// its recorded content hash before trusting the bytes.
    fn load_baseline(&self) -> Result<(BaselineManifest, Vec<(TensorMap, TensorMap)>), String> {
        let manifest = self.load_manifest()?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for (i, sample) in manifest.samples.iter().enumerate() {
            let mut halves = Vec::with_capacity(2);
            for (dir_name, recorded, what) in [
                (&sample.feed_dir, &sample.feed_sha256, "feeds"),
                (&sample.output_dir, &sample.output_sha256, "outputs"),
            ] {
                let dir = self.baseline_dir().join(dir_name);
                let got = tensor_dir_sha256(&dir)
                    .map_err(|e| format!("baseline {what} for sample {i} unreadable: {e}"))?;
                if &got != recorded {
                    return Err(format!(
                        "baseline {what} for sample {i} do not match their recorded hash; \
                         the baseline is corrupt, re-run the baseline stage"
                    ));
                }
                let tensors = read_tensor_dir(&dir)
                    .map_err(|e| format!("baseline {what} for sample {i} unreadable: {e}"))?;
                halves.push(tensors);
            }
            let outputs = halves.pop().expect("two halves");
            let feeds = halves.pop().expect("two halves");
            samples.push((feeds, outputs));
        }
        Ok((manifest, samples))
    }

    fn equivalence_config(&self) -> EquivalenceConfig {
        EquivalenceConfig {
            trials: self.config.equivalence_trials,
            seed: derive_seed(self.config.seed, "equivalence"),
            tolerance: self.config.tolerances.equivalence,
        }
    }

    /// Capability diagnostics for the current model against the configured
    /// profile, each paired with the passes that could repair it. Pure
    /// preview: no ledger interaction.
    pub fn capability_preview(&self) -> Result<Vec<DiagnosticPreview>, String> {
        let source = self.load_source()?;
        let profile = self.load_profile()?;
        let bound = bind_shapes(&source, &self.config.bindings)
            .map_err(|e| format!("shape binding failed: {e}"))?;
        let diagnostics = check_compatibility(&bound, &profile)
            .map_err(|e| format!("shape inference failed: {e}"))?;
        Ok(diagnostics
            .into_iter()
            .map(|diagnostic| {
                let candidate_passes = plan_repairs(&bound, &diagnostic, &[]);
                DiagnosticPreview { diagnostic, candidate_passes }
            })
            .collect())
    }

    pub fn artifact_path(&self, profile: &str, mode: PrecisionMode) -> std::path::PathBuf {
        self.artifacts_dir().join(format!("{profile}.{mode}.{ARTIFACT_EXTENSION}"))
    }

    // ------------------------------------------------------------------
    // Stage 1: golden baseline.
    // ------------------------------------------------------------------

    fn baseline_inner(&mut self) -> StageResult {
        let graph = self.load_source().map_err(fail)?;
        let model_sha256 = graph_sha256(&graph);
        let bound = bind_all(&graph, &self.config.bindings)
            .map_err(|e| fail(format!("shapes unresolved: {e}")))?;
        let session = create_session(&bound, Boundary::Identity)
            .map_err(|e| fail(format!("reference session rejected the model: {e}")))?;
        let feed_sets = gen_feed_sets(&bound.inputs, self.config.seed, self.config.sample_count)
            .map_err(|e| fail(format!("feed generation failed: {e}")))?;

        // Run everything before touching the baseline directory, so a
        // failing sample never leaves a half-written baseline behind.
        let mut runs = Vec::with_capacity(feed_sets.len());
        for (i, feeds) in feed_sets.iter().enumerate() {
            let outputs = session
                .run(feeds)
                .map_err(|e| fail(format!("reference run failed on sample {i}: {e}")))?;
            runs.push(outputs);
        }

        let dir = self.baseline_dir();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|source| PipelineError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        let mut samples = Vec::with_capacity(runs.len());
        for (i, (feeds, outputs)) in feed_sets.iter().zip(&runs).enumerate() {
            let feed_dir = format!("feed_{i}");
            let output_dir = format!("output_{i}");
            let store = |name: &str, tensors: &TensorMap| -> Result<String, StageError> {
                let path = dir.join(name);
                write_tensor_dir(&path, tensors).map_err(|e| {
                    StageError::Pipeline(PipelineError::State {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    })
                })?;
                tensor_dir_sha256(&path).map_err(|e| {
                    StageError::Pipeline(PipelineError::State {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    })
                })
            };
            let feed_sha256 = store(&feed_dir, feeds)?;
            let output_sha256 = store(&output_dir, outputs)?;
            samples.push(BaselineSample { feed_dir, feed_sha256, output_dir, output_sha256 });
        }
        let manifest = BaselineManifest {
            model_sha256: model_sha256.clone(),
            seed: self.config.seed,
            sample_count: self.config.sample_count,
            io: IoManifest::of(&bound),
            samples,
        };
        write_json(&self.baseline_manifest_path(), &manifest)?;
        self.ledger.model_sha256 = model_sha256;
        Ok(format!(
            "captured {} samples at seed {}",
            self.config.sample_count, self.config.seed
        ))
    }

    // ------------------------------------------------------------------
    // Stage 2: serialized-model validation.
    // ------------------------------------------------------------------

    fn validate_inner(&mut self) -> StageResult {
        let graph = load_graph(&self.model_path()).map_err(|e| {
            fail(format!("model failed to re-load from its serialized form: {e}"))
        })?;
        let (manifest, samples) = self.load_baseline().map_err(fail)?;
        if graph_sha256(&graph) != manifest.model_sha256 {
            return Err(fail(
                "model on disk does not match the recorded baseline; re-run the baseline stage",
            ));
        }
        let bound = bind_all(&graph, &self.config.bindings)
            .map_err(|e| fail(format!("shapes unresolved: {e}")))?;
        let session = create_session(&bound, Boundary::Identity)
            .map_err(|e| fail(format!("reference session rejected the reloaded model: {e}")))?;

        let tolerance = self.config.tolerances.validation;
        let mut reports = Vec::with_capacity(samples.len());
        for (i, (feeds, expected)) in samples.iter().enumerate() {
            let got = session
                .run(feeds)
                .map_err(|e| fail(format!("reference run failed on sample {i}: {e}")))?;
            reports.push(compare(expected, &got, &tolerance));
        }
        let doc = AlignmentDoc { samples: reports };
        write_json(&self.alignment_path(StageId::Validate), &doc)?;
        if !doc.passed() {
            return Err(fail(format!(
                "serialized model deviates from the baseline: worst abs {:.3e}, worst rel {:.3e}",
                doc.worst_abs(),
                doc.worst_rel()
            )));
        }
        Ok(format!(
            "{}/{} samples within atol {:.0e} rtol {:.0e}",
            samples.len(),
            samples.len(),
            tolerance.atol,
            tolerance.rtol
        ))
    }

    // ------------------------------------------------------------------
    // Stage 3: build with the bounded repair loop.
    // ------------------------------------------------------------------

    fn build_inner(&mut self) -> StageResult {
        let source = self.load_source().map_err(fail)?;
        let profile = self.load_profile().map_err(fail)?;
        let mode = self.config.precision_mode;
        if !profile.supports_mode(mode) {
            return Err(fail(format!(
                "profile {} does not offer precision mode {mode}",
                profile.name
            )));
        }
        let manifest = self.load_manifest().map_err(fail)?;

        // Bind declared symbol extents up front; leftover symbolic dims
        // surface as DynamicShape diagnostics, which no pass repairs.
        let bound = bind_shapes(&source, &self.config.bindings)
            .map_err(|e| fail(format!("shape binding failed: {e}")))?;
        let source_io = IoManifest::of(&bound);
        if source_io != manifest.io {
            return Err(fail(
                "model io signature no longer matches the baseline recording; \
                 re-run the baseline stage",
            ));
        }

        let mut receipts: Vec<PassReceipt> = Vec::new();
        if !self.config.bindings.is_empty() {
            let detail = self
                .config
                .bindings
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            receipts.push(PassReceipt {
                seq: 0,
                pass_id: "bind_shapes".to_string(),
                signature: "-".to_string(),
                removed: Vec::new(),
                added: Vec::new(),
                detail: Some(detail),
            });
        }

        let kb_path = self.kb_path();
        let mut kb = KnowledgeBase::load(&kb_path)?;
        let eq_cfg = self.equivalence_config();
        let retry_bound = self.config.retry_bound;

        let mut working = bound.clone();
        let mut attempts_by_key: BTreeMap<String, u32> = BTreeMap::new();
        let mut tried: BTreeSet<(String, String)> = BTreeSet::new();
        let mut attempt_log: Vec<AttemptRecord> = Vec::new();
        let mut deltas: Vec<KbDelta> = Vec::new();
        let mut rewrites = 0usize;

        // Each iteration addresses the first remaining diagnostic. Every
        // candidate pass tried for a diagnostic consumes one unit of that
        // diagnostic's retry budget, successful or not, so even a rewrite
        // that keeps re-raising the same diagnostic terminates.
        let intervention: Option<(Vec<_>, String)> = loop {
            let diagnostics = check_compatibility(&working, &profile).map_err(|e| {
                fail(format!("shape inference failed during compatibility check: {e}"))
            })?;
            if diagnostics.is_empty() {
                break None;
            }
            if rewrites > MAX_REWRITES {
                break Some((
                    diagnostics,
                    format!("repair loop applied more than {MAX_REWRITES} rewrites without converging"),
                ));
            }
            let diag = diagnostics[0].clone();
            let sig = diag.signature();
            let key = format!("{sig}@{}", diag.node.as_deref().unwrap_or("-"));
            let attempts = attempts_by_key.get(&key).copied().unwrap_or(0);
            if attempts >= retry_bound {
                break Some((
                    diagnostics,
                    format!("repair budget exhausted for {sig} after {attempts} attempts"),
                ));
            }
            let recommended = kb.recommend(&sig);
            let plan = plan_repairs(&working, &diag, &recommended);
            if plan.is_empty() {
                break Some((diagnostics, format!("no applicable pass for {sig}")));
            }
            let Some(pass_id) = plan
                .into_iter()
                .find(|p| !tried.contains(&(key.clone(), p.clone())))
            else {
                break Some((
                    diagnostics,
                    format!("every applicable pass for {sig} failed"),
                ));
            };
            tried.insert((key.clone(), pass_id.clone()));
            *attempts_by_key.entry(key).or_insert(0) += 1;

            let pass = find_pass(&pass_id).expect("planned pass is registered");
            let failure: Option<String> = match pass.apply(&working, &diag) {
                Err(e) => Some(e.to_string()),
                Ok(rewrite) => {
                    if !interface_preserved(&working, &rewrite.graph) {
                        Some("rewrite changed the graph's io signature".to_string())
                    } else {
                        match verify_equivalence(&working, &rewrite.graph, &eq_cfg) {
                            Err(e) => Some(format!("equivalence check could not run: {e}")),
                            Ok(report) if !report.passed => Some(format!(
                                "equivalence failed: {}",
                                report
                                    .failures
                                    .first()
                                    .map(|f| f.detail.clone())
                                    .unwrap_or_else(|| "outputs differ".to_string())
                            )),
                            Ok(_) => {
                                receipts.push(PassReceipt {
                                    seq: receipts.len() as u64,
                                    pass_id: pass_id.clone(),
                                    signature: sig.clone(),
                                    removed: rewrite.removed.clone(),
                                    added: rewrite.added.clone(),
                                    detail: None,
                                });
                                rewrites += 1;
                                working = rewrite.graph;
                                None
                            }
                        }
                    }
                }
            };
            let success = failure.is_none();
            kb.record(&sig, &pass_id, success, unix_now());
            deltas.push(KbDelta {
                signature: sig.clone(),
                pass_id: pass_id.clone(),
                success,
            });
            attempt_log.push(AttemptRecord {
                signature: sig,
                pass_id,
                outcome: match failure {
                    Some(f) => format!("failed: {f}"),
                    None => "applied".to_string(),
                },
            });
        };

        // Persist the repair trail whichever way the loop ended; failures
        // feed the knowledge base too.
        write_json(&self.receipts_path(), &receipts)?;
        write_json(&self.artifacts_dir().join(KB_DELTAS_FILE), &deltas)?;
        if !deltas.is_empty() {
            kb.save(&kb_path)?;
        }

        if let Some((diagnostics, message)) = intervention {
            let record = InterventionRecord {
                stage: StageId::Build,
                diagnostics,
                attempts: attempt_log,
                message: message.clone(),
            };
            write_json(&self.interventions_path(), &vec![record])?;
            return Err(StageError::Halt(StageStatus::InterventionRequired, message));
        }
        write_json(&self.interventions_path(), &Vec::<InterventionRecord>::new())?;

        if IoManifest::of(&working) != source_io {
            return Err(fail("io signature drifted during repair"));
        }
        let artifact = compile(&working, &profile, mode, None)
            .map_err(|e| fail(format!("compilation failed: {e}")))?;
        let built_path = self.built_graph_path();
        save_graph(&working, &built_path).map_err(|e| {
            StageError::Pipeline(PipelineError::State {
                path: built_path.display().to_string(),
                detail: e.to_string(),
            })
        })?;
        let artifact_path = self.artifact_path(&profile.name, mode);
        save_artifact(&artifact, &artifact_path).map_err(|e| {
            StageError::Pipeline(PipelineError::State {
                path: artifact_path.display().to_string(),
                detail: e.to_string(),
            })
        })?;

        let applied: Vec<&str> = receipts
            .iter()
            .filter(|r| r.signature != "-")
            .map(|r| r.pass_id.as_str())
            .collect();
        Ok(if applied.is_empty() {
            format!("no rewrites needed; compiled {mode} artifact for {}", profile.name)
        } else {
            format!(
                "{} rewrites applied ({}); compiled {mode} artifact for {}",
                applied.len(),
                applied.join(", "),
                profile.name
            )
        })
    }

    // ------------------------------------------------------------------
    // Stage 4: fp16 backend alignment.
    // ------------------------------------------------------------------

    fn align_inner(&mut self) -> StageResult {
        let built = self.load_built().map_err(fail)?;
        let profile = self.load_profile().map_err(fail)?;
        let mode = self.config.precision_mode;
        let artifact = load_artifact(&self.artifact_path(&profile.name, mode))
            .map_err(|e| fail(format!("compiled artifact missing or unreadable: {e}")))?;
        if artifact.graph_sha256 != graph_sha256(&built) {
            return Err(fail(
                "artifact does not match the built graph; re-run the build stage",
            ));
        }
        let (manifest, samples) = self.load_baseline().map_err(fail)?;
        if IoManifest::of(&built) != manifest.io {
            return Err(fail(
                "built graph io signature differs from the baseline recording",
            ));
        }
        let session = create_session(&built, Boundary::F16).map_err(|e| {
            fail(format!("target-numerics session rejected the built graph: {e}"))
        })?;

        let tolerance = self.config.tolerances.fp16;
        let mut reports = Vec::with_capacity(samples.len());
        let mut profile_rows: Vec<NodeProfileRow> = Vec::new();
        for (i, (feeds, expected)) in samples.iter().enumerate() {
            let (got, run_profile) = session
                .run_profiled(feeds)
                .map_err(|e| fail(format!("{mode} run failed on sample {i}: {e}")))?;
            if i == 0 {
                profile_rows = run_profile
                    .nodes
                    .iter()
                    .map(|n| NodeProfileRow {
                        node_id: n.node_id.clone(),
                        op: n.op.clone(),
                        output_elements: n.output_elements,
                    })
                    .collect();
            }
            reports.push(compare(expected, &got, &tolerance));
        }
        let doc = AlignmentDoc { samples: reports };
        write_json(&self.alignment_path(StageId::Align), &doc)?;
        write_json(&self.artifacts_dir().join(NODE_PROFILE_FILE), &profile_rows)?;
        if !doc.passed() {
            return Err(fail(format!(
                "{mode} alignment failed: worst abs {:.3e}, worst rel {:.3e}",
                doc.worst_abs(),
                doc.worst_rel()
            )));
        }
        Ok(format!(
            "{} samples aligned under {mode} (worst abs {:.3e}, worst rel {:.3e})",
            samples.len(),
            doc.worst_abs(),
            doc.worst_rel()
        ))
    }

    // ------------------------------------------------------------------
    // Stage 5: optional quantization.
    // ------------------------------------------------------------------

    fn quantize_inner(&mut self) -> StageResult {
        if !self.config.quant.enabled {
            self.remove_stale_quant_outputs();
            return Err(StageError::Halt(
                StageStatus::Skipped,
                "quantization disabled".to_string(),
            ));
        }
        let quant = self.config.quant;
        if quant.calibration_count == 0 {
            return Err(fail("empty calibration set: quant.calibration_count is 0"));
        }
        let built = self.load_built().map_err(fail)?;
        let profile = self.load_profile().map_err(fail)?;
        if !profile.supports_mode(quant.mode) {
            return Err(fail(format!(
                "profile {} does not offer precision mode {}",
                profile.name, quant.mode
            )));
        }
        let (_, samples) = self.load_baseline().map_err(fail)?;

        // Calibration feeds come from the same generator as the baseline,
        // on a separate seed stream so they never repeat baseline samples.
        let calib_sets = gen_feed_sets(
            &built.inputs,
            derive_seed(self.config.seed, "calibration"),
            quant.calibration_count,
        )
        .map_err(|e| fail(format!("calibration feed generation failed: {e}")))?;
        let calib_root = self.artifacts_dir().join(CALIBRATION_DIR);
        if calib_root.exists() {
            std::fs::remove_dir_all(&calib_root).map_err(|source| PipelineError::Io {
                path: calib_root.display().to_string(),
                source,
            })?;
        }
        for (i, feeds) in calib_sets.iter().enumerate() {
            let dir = calib_root.join(i.to_string());
            write_tensor_dir(&dir, feeds).map_err(|e| {
                StageError::Pipeline(PipelineError::State {
                    path: dir.display().to_string(),
                    detail: e.to_string(),
                })
            })?;
        }

        let params = calibrate(&built, quant.mode, &calib_sets)
            .map_err(|e| fail(format!("calibration failed: {e}")))?;
        write_json(&self.artifacts_dir().join(QUANT_PARAMS_FILE), &params)?;
        let artifact = compile(&built, &profile, quant.mode, Some(&params))
            .map_err(|e| fail(format!("quantized compilation failed: {e}")))?;
        let artifact_path = self.artifact_path(&profile.name, quant.mode);
        save_artifact(&artifact, &artifact_path).map_err(|e| {
            StageError::Pipeline(PipelineError::State {
                path: artifact_path.display().to_string(),
                detail: e.to_string(),
            })
        })?;

        let session = create_session(&built, Boundary::Quant(params)).map_err(|e| {
            fail(format!("quantized session rejected the built graph: {e}"))
        })?;
        let tolerance = self.config.tolerances.quant;
        let mut reports = Vec::with_capacity(samples.len());
        for (i, (feeds, expected)) in samples.iter().enumerate() {
            let got = session
                .run(feeds)
                .map_err(|e| fail(format!("{} run failed on sample {i}: {e}", quant.mode)))?;
            reports.push(compare(expected, &got, &tolerance));
        }
        let doc = AlignmentDoc { samples: reports };
        write_json(&self.alignment_path(StageId::Quantize), &doc)?;
        if !doc.passed() {
            return Err(fail(format!(
                "{} alignment failed: worst abs {:.3e}, worst rel {:.3e}",
                quant.mode,
                doc.worst_abs(),
                doc.worst_rel()
            )));
        }
        Ok(format!(
            "{} samples aligned under {} with {}-sample calibration (worst abs {:.3e}, worst rel {:.3e})",
            samples.len(),
            quant.mode,
            quant.calibration_count,
            doc.worst_abs(),
            doc.worst_rel()
        ))
    }

    /// A skipped quantization stage clears quantization outputs from any
    /// earlier configuration, so reports never pick up stale results.
    fn remove_stale_quant_outputs(&self) {
        let _ = std::fs::remove_file(self.alignment_path(StageId::Quantize));
        let _ = std::fs::remove_file(self.artifacts_dir().join(QUANT_PARAMS_FILE));
        let _ = std::fs::remove_dir_all(self.artifacts_dir().join(CALIBRATION_DIR));
        if let Ok(profile) = self.load_profile() {
            for mode in [PrecisionMode::W8A8, PrecisionMode::W8A16] {
                let _ = std::fs::remove_file(self.artifact_path(&profile.name, mode));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{dims, DType, Node, OpKind, TensorSpec, TensorValue};
    use crate::pipeline::config::ProjectConfig;
    use crate::pipeline::{StageId, StageStatus};
    use crate::toys;
    use std::path::Path;

    /// Project in `dir/name` over the given toy graph, with the knowledge
    /// base kept inside the project so tests never touch the user's store.
    fn project_with(dir: &Path, name: &str, graph: &Graph) -> Project {
        let root = dir.join(name);
        let mut config = ProjectConfig::new("model.pir.json", "qnn-like");
        config.kb_path = Some("kb.json".to_string());
        let project = Project::init(&root, config).unwrap();
        crate::ir::io::save_graph(graph, &root.join("model.pir.json")).unwrap();
        Project::open(&root).unwrap()
    }

    fn statuses(project: &Project) -> Vec<StageStatus> {
        StageId::ALL.iter().map(|&s| project.ledger.status(s)).collect()
    }

    #[test]
    fn clean_graph_runs_all_six_stages() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "conv", &toys::toy_conv());
        let outcomes = project.run_all().unwrap();
        assert_eq!(outcomes.len(), 6);
        assert_eq!(
            statuses(&project),
            vec![
                StageStatus::Passed,
                StageStatus::Passed,
                StageStatus::Passed,
                StageStatus::Passed,
                StageStatus::Skipped,
                StageStatus::Passed,
            ]
        );
        assert!(project.root.join("report/report.json").exists());
        assert!(project.root.join("report/report.md").exists());
        // Re-invocation is a no-op.
        assert!(project.run_all().unwrap().is_empty());
    }

    #[test]
    fn mod_chain_is_repaired_with_the_expected_pass_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "det", &toys::toy_det());
        for stage in [StageId::Baseline, StageId::Validate, StageId::Build] {
            let outcome = project.run_stage(stage).unwrap();
            assert_eq!(outcome.status, StageStatus::Passed, "{}: {}", stage, outcome.detail);
        }
        let receipts: Vec<PassReceipt> =
            serde_json::from_str(&std::fs::read_to_string(project.receipts_path()).unwrap())
                .unwrap();
        let passes: Vec<&str> = receipts.iter().map(|r| r.pass_id.as_str()).collect();
        assert_eq!(passes, vec!["expand_mod_float", "eliminate_floor"]);
        let interventions: Vec<InterventionRecord> =
            serde_json::from_str(&std::fs::read_to_string(project.interventions_path()).unwrap())
                .unwrap();
        assert!(interventions.is_empty());
    }

    #[test]
    fn integer_mod_records_a_failed_attempt_then_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "det-int", &toys::toy_det_int());
        project.run_stage(StageId::Baseline).unwrap();
        project.run_stage(StageId::Validate).unwrap();
        let outcome = project.run_stage(StageId::Build).unwrap();
        assert_eq!(outcome.status, StageStatus::Passed, "{}", outcome.detail);

        let deltas: Vec<KbDelta> = serde_json::from_str(
            &std::fs::read_to_string(project.artifacts_dir().join(KB_DELTAS_FILE)).unwrap(),
        )
        .unwrap();
        // Cold knowledge base: the float expansion is tried first and fails
        // on dtype, then the integer expansion lands.
        assert_eq!(deltas.len(), 2);
        assert_eq!(deltas[0].pass_id, "expand_mod_float");
        assert!(!deltas[0].success);
        assert_eq!(deltas[1].pass_id, "expand_mod_integer");
        assert!(deltas[1].success);

        // Warm rerun in a fresh project sharing the same knowledge base:
        // the recommendation skips the known-bad pass.
        let kb_file = project.root.join("kb.json");
        let root2 = dir.path().join("det-int-warm");
        let mut config = ProjectConfig::new("model.pir.json", "qnn-like");
        config.kb_path = Some(kb_file.display().to_string());
        let mut warm = Project::init(&root2, config).unwrap();
        crate::ir::io::save_graph(&toys::toy_det_int(), &root2.join("model.pir.json")).unwrap();
        warm.run_stage(StageId::Baseline).unwrap();
        warm.run_stage(StageId::Validate).unwrap();
        assert_eq!(warm.run_stage(StageId::Build).unwrap().status, StageStatus::Passed);
        let warm_deltas: Vec<KbDelta> = serde_json::from_str(
            &std::fs::read_to_string(warm.artifacts_dir().join(KB_DELTAS_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(warm_deltas.len(), 1);
        assert_eq!(warm_deltas[0].pass_id, "expand_mod_integer");
        assert!(warm_deltas[0].success);
    }

    /// Graph whose only diagnostic cannot be repaired: an integer Mod whose
    /// operands may be negative, so both Mod rewrites refuse.
    fn unrepairable() -> Graph {
        let mut g = Graph::new("unrepairable");
        g.inputs.push(
            TensorSpec::new("x", DType::I64, dims(&[4])).with_range(-5.0, 5.0),
        );
        g.outputs.push(TensorSpec::new("y", DType::I64, dims(&[4])));
        g.add_constant("k", TensorValue::i64(vec![], vec![3]));
        g.nodes.push(Node::new("m", OpKind::Mod, ["x", "k"], ["y"]));
        g
    }

    #[test]
    fn unrepairable_graph_requires_intervention_within_budget() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "stuck", &unrepairable());
        project.run_stage(StageId::Baseline).unwrap();
        project.run_stage(StageId::Validate).unwrap();
        let outcome = project.run_stage(StageId::Build).unwrap();
        assert_eq!(outcome.status, StageStatus::InterventionRequired, "{}", outcome.detail);

        let interventions: Vec<InterventionRecord> =
            serde_json::from_str(&std::fs::read_to_string(project.interventions_path()).unwrap())
                .unwrap();
        assert_eq!(interventions.len(), 1);
        let record = &interventions[0];
        assert!(!record.diagnostics.is_empty());
        assert!(record.attempts.len() <= project.config.retry_bound as usize);
        assert_eq!(record.attempts.len(), 2);
        assert!(record.attempts.iter().all(|a| a.outcome.starts_with("failed")));

        // The build stage stays incomplete, so later stages refuse to run.
        let err = project.run_stage(StageId::Align).unwrap_err();
        assert!(matches!(err, PipelineError::OutOfOrder { .. }));
    }

    #[test]
    fn corrupted_baseline_blob_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "conv", &toys::toy_conv());
        project.run_stage(StageId::Baseline).unwrap();
        // Flip bytes in one stored output blob.
        let blob = project.baseline_dir().join("output_0");
        let manifest_names: Vec<_> = std::fs::read_dir(&blob)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().map(|e| e == "bin").unwrap_or(false))
            .collect();
        std::fs::write(&manifest_names[0], vec![0u8; 16]).unwrap();
        let outcome = project.run_stage(StageId::Validate).unwrap();
        assert_eq!(outcome.status, StageStatus::Failed);
        assert!(outcome.detail.contains("baseline"), "{}", outcome.detail);
    }

    #[test]
    fn quantization_stage_runs_when_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "conv-quant", &toys::toy_conv());
        project.config.quant.enabled = true;
        let outcomes = project.run_all().unwrap();
        assert_eq!(outcomes.len(), 6, "{outcomes:?}");
        assert_eq!(project.ledger.status(StageId::Quantize), StageStatus::Passed);
        assert!(project.artifacts_dir().join(QUANT_PARAMS_FILE).exists());
        assert!(project
            .artifact_path("qnn-like", PrecisionMode::W8A8)
            .exists());
        assert!(project.artifacts_dir().join(CALIBRATION_DIR).join("15").exists());
    }

    #[test]
    fn dynamic_graph_binds_via_config_and_completes() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "dyn", &toys::toy_dyn());
        project.config.bindings.insert("N".to_string(), 4);
        let outcomes = project.run_all().unwrap();
        assert!(outcomes.iter().all(|o| o.status.is_complete()), "{outcomes:?}");
        let receipts: Vec<PassReceipt> =
            serde_json::from_str(&std::fs::read_to_string(project.receipts_path()).unwrap())
                .unwrap();
        assert_eq!(receipts[0].pass_id, "bind_shapes");
        assert_eq!(receipts[0].detail.as_deref(), Some("N=4"));
    }

    #[test]
    fn unbound_symbol_requires_intervention_at_build() {
        let dir = tempfile::tempdir().unwrap();
        let mut project = project_with(dir.path(), "dyn-stuck", &toys::toy_dyn());
        // Baseline needs full binding, so bind there, then drop the binding
        // to exercise the build-stage dynamic-shape path.
        project.config.bindings.insert("N".to_string(), 4);
        project.run_stage(StageId::Baseline).unwrap();
        project.run_stage(StageId::Validate).unwrap();
        project.config.bindings.clear();
        let outcome = project.run_stage(StageId::Build).unwrap();
        // With no binding the io signature diverges from the baseline
        // recording, which the stage reports before diagnosing.
        assert_eq!(outcome.status, StageStatus::Failed);
        assert!(outcome.detail.contains("io signature"), "{}", outcome.detail);
    }

    #[test]
    fn reports_are_byte_identical_across_fresh_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut first = project_with(dir.path(), "a", &toys::toy_det());
        let mut second = project_with(dir.path(), "b", &toys::toy_det());
        assert!(first.run_all().unwrap().iter().all(|o| o.status.is_complete()));
        assert!(second.run_all().unwrap().iter().all(|o| o.status.is_complete()));
        let report_a = std::fs::read(first.root.join("report/report.json")).unwrap();
        let report_b = std::fs::read(second.root.join("report/report.json")).unwrap();
        assert_eq!(report_a, report_b);
        let manifest_a = std::fs::read(first.baseline_manifest_path()).unwrap();
        let manifest_b = std::fs::read(second.baseline_manifest_path()).unwrap();
        assert_eq!(manifest_a, manifest_b);
    }
}
