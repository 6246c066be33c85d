//! `ctarget`: batch pipeline for causal targeting experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] ctarget::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for failures during estimation.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Write { .. } => 3,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; relative data paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Generate a synthetic trial: data.csv, truth.csv, design.json.
    Gen(CommonArgs),
    /// Full pipeline: scores, policy curves, RATE, GATES, calibration.
    Evaluate(CommonArgs),
    /// Sorted group average treatment effects.
    Gates(CommonArgs),
    /// Calibration regression of the CATE estimates.
    Calibrate(CommonArgs),
    /// TOC curves and AUTOC per policy.
    Rate(CommonArgs),
    /// Policy value at a fixed fraction over a causal-forest parameter grid.
    Sweep(CommonArgs),
    /// Semi-synthetic study re-drawing outcomes from fitted nuisances.
    Simulate(CommonArgs),
}

#[derive(Debug, Parser)]
#[command(name = "ctarget", version, about = "Causal targeting experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

fn run(verb: Verb) -> Result<(), CliError> {
    let (args, f): (CommonArgs, fn(&config::RunConfig, &std::path::Path) -> Result<(), CliError>) = match verb {
        Verb::Gen(a) => (a, commands::gen),
        Verb::Evaluate(a) => (a, commands::evaluate),
        Verb::Gates(a) => (a, commands::gates),
        Verb::Calibrate(a) => (a, commands::calibrate),
        Verb::Rate(a) => (a, commands::rate),
        Verb::Sweep(a) => (a, commands::sweep),
        Verb::Simulate(a) => (a, commands::simulate),
    };
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let config = config::RunConfig::load(&args.config, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Write { path: args.out.clone(), source: e })?;
    commands::write_json(&args.out.join("resolved_config.json"), &config)?;
    f(&config, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
