//! Command-line front end for the adaptation pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 phase failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use csuda::continual::Mode;
use csuda::error::Error;
use csuda::harness::{emit_reports, ExperimentConfig, Phase, Pipeline, Scenario};

#[derive(Parser)]
#[command(name = "csuda", version, about = "Source-free domain adaptation without forgetting")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue an existing run instead of creating a new one.
    #[arg(long, global = true, value_name = "RUN_ID")]
    resume: Option<String>,
    /// single_source, multi_source or multi_target (overrides the config).
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    /// suda or csuda (overrides the config).
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Parent directory of run directories (overrides the config).
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Train the source model.
    TrainSource,
    /// Label the target data with the source model.
    InferLabels,
    /// Refine pseudo-labels with the residual-label ensemble.
    Refine,
    /// Synthesise source-style images.
    Synthesize,
    /// Train the final model(s).
    TrainFinal,
    /// Evaluate and write accuracy tables.
    Evaluate,
    /// Run the whole pipeline and emit reports.
    Run,
    /// Emit figures and tables for an existing run (needs --resume).
    Report,
}

impl Verb {
    fn last_phase(self) -> Option<Phase> {
        Some(match self {
            Verb::TrainSource => Phase::TrainSource,
            Verb::InferLabels => Phase::InferLabels,
            Verb::Refine => Phase::Refine,
            Verb::Synthesize => Phase::Synthesize,
            Verb::TrainFinal => Phase::TrainFinal,
            Verb::Evaluate | Verb::Run => Phase::Evaluate,
            Verb::Report => return None,
        })
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn open_pipeline(cli: &Cli) -> anyhow::Result<Pipeline> {
    if let Some(run_id) = &cli.resume {
        if cli.seed.is_some() || cli.scenario.is_some() || cli.mode.is_some() || cli.config.is_some() {
            return Err(config_error(
                "--config, --seed, --scenario and --mode cannot be combined with --resume",
            ));
        }
        let runs_dir = cli.runs_dir.clone().unwrap_or_else(|| ExperimentConfig::default().runs_dir);
        return Ok(Pipeline::resume(&runs_dir, run_id).with_context(|| format!("resuming run {run_id}"))?);
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(scenario) = cli.scenario {
        config.scenario = scenario;
    }
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(dir) = &cli.runs_dir {
        config.runs_dir = dir.clone();
    }
    Ok(Pipeline::create(&config)?)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let mut pipeline = open_pipeline(cli)?;
    println!("run directory: {}", pipeline.run_dir().display());
    if let Some(last) = cli.verb.last_phase() {
        pipeline.run_until(last)?;
    }
    if matches!(cli.verb, Verb::Run | Verb::Report) {
        for path in emit_reports(pipeline.manifest(), pipeline.run_dir())? {
            println!("wrote {}", path.display());
        }
    }
    let table = pipeline.run_dir().join("reports/table.txt");
    if matches!(cli.verb, Verb::Run | Verb::Evaluate | Verb::Report) && table.exists() {
        print!("{}", std::fs::read_to_string(&table)?);
    }
    for record in &pipeline.manifest().phases {
        for (k, v) in &record.metrics {
            log::info!("{} {k} = {v:.4}", record.phase);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(err) if err.is_config() => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
