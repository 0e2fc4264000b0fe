//! Command-line surface over the tournament engine: single runs, plan
//! sweeps, lexical analysis, trace curation, and reporting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dilemma_lab::agents::CompletionBackend;
use dilemma_lab::curation::{run_pipeline, retention_csv, PipelineParams};
use dilemma_lab::engine::{run_match, MatchConfig};
use dilemma_lab::error::{Error, Result};
use dilemma_lab::harness::{
    analyze_dir, curation_records_from_log, execute_plan, load_run_dir, report, save_log,
    stable_hash64, ExperimentPlan,
};
use dilemma_lab::lexalysis::LexiconSet;
use dilemma_lab::llm_client::{EndpointConfig, LlmClient};

#[derive(Parser)]
#[command(name = "dilemma", about = "Repeated social-dilemma tournament engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EndpointArgs {
    /// Path to a TOML endpoint config (base_url, api_key_env, limits).
    #[arg(long, global = true)]
    endpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one match config (TOML) and write its JSONL log.
    Run {
        config: PathBuf,
        /// Output file; defaults to `<config stem>.jsonl` next to the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Expand an experiment plan (TOML) and run every cell.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        /// Skip cells whose artifact already exists.
        #[arg(long)]
        resume: bool,
        /// Overrides the plan's seed_base.
        #[arg(long)]
        seed_base: Option<u64>,
        /// Base directory for the plan's output_dir.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Lexical trace analysis over a run directory -> lexical.csv.
    Analyze { run_dir: PathBuf },
    /// Curate traces from a run directory into weighted training JSONL.
    Curate {
        trace_dir: PathBuf,
        /// Judge model name; judging requires --endpoint.
        #[arg(long)]
        judge_model: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Aggregate report over a run directory -> report.csv + report.md.
    Report { run_dir: PathBuf },
}

fn load_client(endpoint: &EndpointArgs) -> Result<Option<LlmClient>> {
    match &endpoint.endpoint {
        None => Ok(None),
        Some(path) => {
            let cfg: EndpointConfig = toml::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Error::ConfigError(format!("bad endpoint config: {e}")))?;
            Ok(Some(LlmClient::new(cfg)))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(config: &Path, out: Option<PathBuf>, endpoint: &EndpointArgs) -> Result<()> {
    let cfg: MatchConfig = toml::from_str(&fs::read_to_string(config)?)
        .map_err(|e| Error::ConfigError(format!("bad match config: {e}")))?;
    let client = load_client(endpoint)?;
    if cfg.has_llm() && client.is_none() {
        return Err(Error::ConfigError(
            "config binds LLM agents; pass --endpoint".into(),
        ));
    }
    let log = run_match(&cfg, client.as_ref().map(|c| c as &dyn CompletionBackend))?;
    let out = out.unwrap_or_else(|| config.with_extension("jsonl"));
    write_file(&out, &save_log(&log)?)?;
    println!("{} rounds, termination: {:?}", log.records.len(), log.termination);
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    parallelism: usize,
    resume: bool,
    seed_base: Option<u64>,
    out_dir: &Path,
    endpoint: &EndpointArgs,
) -> Result<()> {
    let mut plan = ExperimentPlan::from_file(config)?;
    if let Some(base) = seed_base {
        plan.seed_base = base;
    }
    let client = load_client(endpoint)?;
    let (dir, summary) = execute_plan(
        &plan,
        out_dir,
        parallelism,
        resume,
        client.as_ref().map(|c| c as &(dyn CompletionBackend + Sync)),
    )?;
    println!(
        "{}: {} completed, {} skipped, {} failed -> {}",
        plan.name,
        summary.completed.len(),
        summary.skipped.len(),
        summary.failed.len(),
        dir.display()
    );
    for (id, err) in &summary.failed {
        eprintln!("FAILED {id}: {err}");
    }
    if summary.failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Other(format!("{} cells failed", summary.failed.len())))
    }
}

fn cmd_analyze(run_dir: &Path) -> Result<()> {
    let runs = load_run_dir(run_dir)?;
    let csv = analyze_dir(&runs, &LexiconSet::default())?;
    write_file(&run_dir.join("lexical.csv"), &csv)
}

fn cmd_curate(
    trace_dir: &Path,
    judge_model: Option<&str>,
    seed_base: u64,
    endpoint: &EndpointArgs,
) -> Result<()> {
    let runs = load_run_dir(trace_dir)?;
    let mut records = Vec::new();
    for (id, log) in &runs {
        match curation_records_from_log(id, log) {
            Ok(mut r) => records.append(&mut r),
            Err(Error::NoTraces) => continue,
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(Error::NoTraces);
    }
    let client = load_client(endpoint)?;
    let judge = match (judge_model, &client) {
        (Some(model), Some(client)) => Some((client as &dyn CompletionBackend, model)),
        (Some(_), None) => {
            return Err(Error::ConfigError("--judge-model requires --endpoint".into()))
        }
        _ => None,
    };
    let params = PipelineParams {
        seed: stable_hash64(&[&seed_base.to_string(), "curation"]),
        ..PipelineParams::default()
    };
    let out = run_pipeline(records, &LexiconSet::default(), judge, params)?;
    let jsonl = dilemma_lab::curation::export_training(&out.records, None)?;
    write_file(&trace_dir.join("training.jsonl"), &jsonl)?;
    write_file(&trace_dir.join("retention.csv"), &retention_csv(&out.retention))
}

fn cmd_report(run_dir: &Path) -> Result<()> {
    let runs = load_run_dir(run_dir)?;
    let (csv, md) = report(&runs, &LexiconSet::default())?;
    write_file(&run_dir.join("report.csv"), &csv)?;
    write_file(&run_dir.join("report.md"), &md)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, endpoint } => cmd_run(config, out.clone(), endpoint),
        Command::Sweep {
            config,
            parallelism,
            resume,
            seed_base,
            out_dir,
            endpoint,
        } => cmd_sweep(config, *parallelism, *resume, *seed_base, out_dir, endpoint),
        Command::Analyze { run_dir } => cmd_analyze(run_dir),
        Command::Curate {
            trace_dir,
            judge_model,
            seed_base,
            endpoint,
        } => cmd_curate(trace_dir, judge_model.as_deref(), *seed_base, endpoint),
        Command::Report { run_dir } => cmd_report(run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
