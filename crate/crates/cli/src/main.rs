//! Command-line front end for the portir porting pipeline.
//!
//! Every subcommand maps onto one pipeline stage (or a small composition of
//! them) over a project directory. Commands are idempotent with respect to
//! completed stages, never prompt, and signal their result through the exit
//! code: 0 success, 1 failure, 2 usage error, 3 intervention required.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use portir_core::capability::PrecisionMode;
use portir_core::interp::compare::Tolerance;
use portir_core::ir::io::save_graph;
use portir_core::pipeline::{
    DiagnosticPreview, Project, ProjectConfig, StageId, StageOutcome, StageStatus,
};
use portir_core::toys;

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_INTERVENTION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "portir",
    version,
    about = "Staged model porting: baseline, validate, repair, align, quantize, report"
)]
struct Cli {
    /// Project directory to operate on
    #[arg(short = 'p', long, global = true, default_value = ".")]
    project: PathBuf,

    /// Emit machine-readable JSON instead of human-oriented text
    #[arg(long, global = true)]
    json: bool,

    /// Knowledge-base file to use, overriding PORTIR_KB and the project config
    #[arg(long, global = true, value_name = "FILE")]
    kb: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a project directory with a config pointing at a model
    Init(InitArgs),
    /// Print the project configuration and stage statuses
    ShowConfig,
    /// Capture reference feeds and outputs for the source model (stage 1)
    Baseline,
    /// Report target-profile incompatibilities and, once a baseline exists,
    /// validate the serialized model against it (stage 2)
    Check,
    /// Repair incompatibilities and compile the target artifact (stage 3)
    Build,
    /// Run the built graph under fp16 against the baseline (stage 4)
    Run,
    /// Calibrate, quantize, and validate against the baseline (stage 5)
    Quantize(QuantFlags),
    /// Generate the deployment report (stage 6)
    Report,
    /// Run every remaining stage in order
    RunAll(QuantFlags),
    /// Write a bundled example model to disk
    GenModel(GenModelArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Directory to create the project in (must be empty or absent)
    #[arg(default_value = ".")]
    dir: PathBuf,

    /// Path to the source model, resolved relative to the project directory
    #[arg(long)]
    model: String,

    /// Target profile: a built-in name or a path to a profile file
    #[arg(long, default_value = "qnn-like")]
    profile: String,

    /// Deployment mode; fp16 skips quantization, w8a16 and w8a8 enable it
    #[arg(long, default_value = "fp16", value_parser = ["fp16", "w8a16", "w8a8"])]
    mode: String,

    /// Seed for baseline and calibration feed generation
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Number of baseline samples to capture
    #[arg(long, default_value_t = 4)]
    sample_count: usize,

    /// Repair attempts allowed per diagnostic before requiring intervention
    #[arg(long, default_value_t = 3)]
    retry_bound: u32,

    /// Calibration sample count for quantized modes
    #[arg(long, default_value_t = 16)]
    calibration_count: usize,

    /// Bind a symbolic dimension, e.g. --bind N=4 (repeatable)
    #[arg(long = "bind", value_name = "NAME=INT", value_parser = parse_binding)]
    bind: Vec<(String, u64)>,

    /// Override a comparison tolerance, e.g. --tolerance fp16=1e-3,1e-2
    /// (stages: validation, fp16, quant, equivalence; repeatable)
    #[arg(long = "tolerance", value_name = "STAGE=ATOL,RTOL", value_parser = parse_tolerance)]
    tolerance: Vec<(String, Tolerance)>,
}

#[derive(Args)]
struct QuantFlags {
    /// Record the quantization stage as skipped even if the config enables it
    #[arg(long)]
    skip_quant: bool,
}

#[derive(Args)]
struct GenModelArgs {
    /// Which bundled model to write
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(toys::TOY_NAMES))]
    name: String,

    /// Output path (defaults to NAME.pir.json in the current directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_binding(raw: &str) -> Result<(String, u64), String> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=INT, got {raw:?}"))?;
    if name.is_empty() {
        return Err(format!("empty dimension name in {raw:?}"));
    }
    let extent: u64 = value
        .parse()
        .map_err(|e| format!("bad extent for {name}: {e}"))?;
    Ok((name.to_string(), extent))
}

fn parse_tolerance(raw: &str) -> Result<(String, Tolerance), String> {
    let (stage, values) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected STAGE=ATOL,RTOL, got {raw:?}"))?;
    if !["validation", "fp16", "quant", "equivalence"].contains(&stage) {
        return Err(format!(
            "unknown tolerance stage {stage:?}; use validation, fp16, quant, or equivalence"
        ));
    }
    let (atol, rtol) = values
        .split_once(',')
        .ok_or_else(|| format!("expected ATOL,RTOL after {stage}="))?;
    let atol: f64 = atol.parse().map_err(|e| format!("bad atol: {e}"))?;
    let rtol: f64 = rtol.parse().map_err(|e| format!("bad rtol: {e}"))?;
    Ok((stage.to_string(), Tolerance::new(atol, rtol)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Init(args) => cmd_init(&cli, args),
        Command::ShowConfig => cmd_show_config(&cli),
        Command::Baseline => cmd_stage(&cli, StageId::Baseline),
        Command::Check => cmd_check(&cli),
        Command::Build => cmd_stage(&cli, StageId::Build),
        Command::Run => cmd_stage(&cli, StageId::Align),
        Command::Quantize(flags) => cmd_quantize(&cli, flags),
        Command::Report => cmd_report(&cli),
        Command::RunAll(flags) => cmd_run_all(&cli, flags),
        Command::GenModel(args) => cmd_gen_model(&cli, args),
    }
}

/// Flag beats environment beats project config beats the default location.
fn kb_override(cli: &Cli) -> Option<String> {
    cli.kb
        .clone()
        .or_else(|| std::env::var("PORTIR_KB").ok().filter(|v| !v.is_empty()))
}

fn open_project(cli: &Cli) -> Result<Project> {
    let mut project = Project::open(&cli.project)?;
    if let Some(kb) = kb_override(cli) {
        project.kb_override = Some(PathBuf::from(kb));
    }
    Ok(project)
}

fn exit_code(status: StageStatus) -> u8 {
    match status {
        StageStatus::Failed => EXIT_FAILED,
        StageStatus::InterventionRequired => EXIT_INTERVENTION,
        _ => EXIT_OK,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_outcome(outcome: &StageOutcome) {
    println!("{}: {} - {}", outcome.stage, outcome.status, outcome.detail);
}

fn cmd_init(cli: &Cli, args: &InitArgs) -> Result<u8> {
    let mut config = ProjectConfig::new(&args.model, &args.profile);
    config.seed = args.seed;
    config.sample_count = args.sample_count;
    config.retry_bound = args.retry_bound;
    config.quant.calibration_count = args.calibration_count;
    if let Some(mode) = PrecisionMode::parse(&args.mode) {
        if mode.is_quantized() {
            config.quant.enabled = true;
            config.quant.mode = mode;
        }
    }
    for (name, extent) in &args.bind {
        config.bindings.insert(name.clone(), *extent);
    }
    for (stage, tolerance) in &args.tolerance {
        match stage.as_str() {
            "validation" => config.tolerances.validation = *tolerance,
            "fp16" => config.tolerances.fp16 = *tolerance,
            "quant" => config.tolerances.quant = *tolerance,
            "equivalence" => config.tolerances.equivalence = *tolerance,
            _ => unreachable!("validated by the flag parser"),
        }
    }
    if let Some(kb) = &cli.kb {
        config.kb_path = Some(kb.clone());
    }
    let project = Project::init(&args.dir, config)?;
    if cli.json {
        print_json(&project.config)?;
    } else {
        println!("initialized project at {}", args.dir.display());
        println!("model: {}", project.config.model);
        println!("profile: {}", project.config.profile);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ConfigView<'a> {
    config: &'a ProjectConfig,
    model_sha256: &'a str,
    stages: Vec<StageLine>,
}

#[derive(Serialize)]
struct StageLine {
    stage: StageId,
    status: StageStatus,
}

fn cmd_show_config(cli: &Cli) -> Result<u8> {
    let project = open_project(cli)?;
    let stages: Vec<StageLine> = StageId::ALL
        .into_iter()
        .map(|stage| StageLine { stage, status: project.ledger.status(stage) })
        .collect();
    if cli.json {
        print_json(&ConfigView {
            config: &project.config,
            model_sha256: &project.ledger.model_sha256,
            stages,
        })?;
    } else {
        println!("{}", serde_json::to_string_pretty(&project.config)?);
        println!();
        for line in &stages {
            println!("{}: {}", line.stage, line.status);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_stage(cli: &Cli, stage: StageId) -> Result<u8> {
    let mut project = open_project(cli)?;
    let outcome = project.run_stage(stage)?;
    report_outcome(cli, &project, &outcome)?;
    Ok(exit_code(outcome.status))
}

fn report_outcome(cli: &Cli, project: &Project, outcome: &StageOutcome) -> Result<()> {
    if cli.json {
        print_json(outcome)?;
    } else {
        print_outcome(outcome);
        if outcome.status == StageStatus::InterventionRequired {
            print_interventions(project)?;
        }
    }
    Ok(())
}

fn print_interventions(project: &Project) -> Result<()> {
    let path = project.interventions_path();
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Ok(());
    };
    let records: Vec<portir_core::pipeline::InterventionRecord> =
        serde_json::from_str(&text).context("interventions file is unreadable")?;
    for record in records {
        println!("intervention needed: {}", record.message);
        for diag in &record.diagnostics {
            println!("  {diag}");
        }
        for attempt in &record.attempts {
            println!("  tried {} on {}: {}", attempt.pass_id, attempt.signature, attempt.outcome);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckView {
    profile: String,
    diagnostics: Vec<DiagnosticPreview>,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<StageOutcome>,
}

fn cmd_check(cli: &Cli) -> Result<u8> {
    let mut project = open_project(cli)?;
    let diagnostics = project.capability_preview().map_err(|detail| anyhow!(detail))?;
    // The serialized-model validation needs a baseline to compare against;
    // before one exists this command reports capability findings only.
    let validation = if project.ledger.status(StageId::Baseline).is_complete() {
        Some(project.run_stage(StageId::Validate)?)
    } else {
        None
    };
    let failed = validation.as_ref().map(|o| o.status == StageStatus::Failed).unwrap_or(false);
    if cli.json {
        print_json(&CheckView {
            profile: project.config.profile.clone(),
            diagnostics: diagnostics.clone(),
            validation: validation.clone(),
        })?;
    } else {
        if diagnostics.is_empty() {
            println!("profile {}: no incompatibilities", project.config.profile);
        } else {
            println!(
                "profile {}: {} incompatibilit{}",
                project.config.profile,
                diagnostics.len(),
                if diagnostics.len() == 1 { "y" } else { "ies" }
            );
            for preview in &diagnostics {
                println!("  {}", preview.diagnostic);
                if preview.candidate_passes.is_empty() {
                    println!("    no applicable passes; manual surgery required");
                } else {
                    println!("    candidate passes: {}", preview.candidate_passes.join(", "));
                }
            }
        }
        match &validation {
            Some(outcome) => print_outcome(outcome),
            None => println!("serialized-model validation skipped: no baseline captured yet"),
        }
    }
    if failed || !diagnostics.is_empty() {
        Ok(EXIT_FAILED)
    } else {
        Ok(EXIT_OK)
    }
}

fn cmd_quantize(cli: &Cli, flags: &QuantFlags) -> Result<u8> {
    let mut project = open_project(cli)?;
    if flags.skip_quant {
        project.config.quant.enabled = false;
    }
    let outcome = project.run_stage(StageId::Quantize)?;
    report_outcome(cli, &project, &outcome)?;
    Ok(exit_code(outcome.status))
}

fn cmd_report(cli: &Cli) -> Result<u8> {
    let mut project = open_project(cli)?;
    let outcome = project.run_stage(StageId::Report)?;
    // Regenerate on reruns too: the rendering is deterministic, so this
    // restores deleted report files without recomputing anything else.
    if outcome.status == StageStatus::Passed {
        project.generate_report_files()?;
    }
    if cli.json {
        print_json(&outcome)?;
    } else {
        print_outcome(&outcome);
        println!("report: {}", project.report_json_path().display());
        println!("report: {}", project.report_md_path().display());
    }
    Ok(exit_code(outcome.status))
}

fn cmd_run_all(cli: &Cli, flags: &QuantFlags) -> Result<u8> {
    let mut project = open_project(cli)?;
    if flags.skip_quant {
        project.config.quant.enabled = false;
    }
    let outcomes = project.run_all()?;
    let code = outcomes.last().map(|o| exit_code(o.status)).unwrap_or(EXIT_OK);
    if cli.json {
        print_json(&outcomes)?;
    } else if outcomes.is_empty() {
        println!("all stages already complete");
    } else {
        for outcome in &outcomes {
            print_outcome(outcome);
            if outcome.status == StageStatus::InterventionRequired {
                print_interventions(&project)?;
            }
        }
    }
    Ok(code)
}

#[derive(Serialize)]
struct GenModelView {
    name: String,
    path: String,
}

fn cmd_gen_model(cli: &Cli, args: &GenModelArgs) -> Result<u8> {
    let graph = toys::build(&args.name)
        .ok_or_else(|| anyhow!("unknown model {:?}", args.name))?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.pir.json", args.name)));
    if path.exists() {
        bail!("refusing to overwrite {}", path.display());
    }
    save_graph(&graph, &path).with_context(|| format!("writing {}", path.display()))?;
    if cli.json {
        print_json(&GenModelView { name: args.name.clone(), path: path.display().to_string() })?;
    } else {
        println!("wrote {} to {}", args.name, path.display());
    }
    Ok(EXIT_OK)
}
