//! `impactor`: simulate panels, validate covariate strategies, estimate
//! per-entity shock impacts, fit the hierarchical model, and report.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig, StrategyPolicy};

/// A configuration or input problem; the process exits with code 2.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
}

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<impactor_core::Error> for CliError {
    fn from(e: impactor_core::Error) -> Self {
        CliError::new(e.to_string())
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some entities (or the model) failed; details are in failures.csv.
    Partial(usize),
}

impl Outcome {
    pub fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Complete
        } else {
            Outcome::Partial(n)
        }
    }
}

#[derive(Parser)]
#[command(name = "impactor", version, about = "Shock impact estimation on daily visit panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic treated, control and reference panels with ground truth.
    Simulate(CommonArgs),
    /// Compare covariate strategies on pre-shock hold-out windows.
    Evaluate(CommonArgs),
    /// Fit each treated entity and write point-wise and cumulative impacts.
    Impact(CommonArgs),
    /// Fit the hierarchical model to terminal cumulative impacts.
    Hbm(CommonArgs),
    /// Summarize cumulative impacts by category and region at fixed horizons.
    Report(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-entity jobs.
    #[arg(long)]
    workers: Option<usize>,
    /// none, category, specific or auto.
    #[arg(long)]
    strategy: Option<StrategyPolicy>,
    /// Drop entities whose pre-shock mean visits is at or below this.
    #[arg(long)]
    min_mean: Option<f64>,
    /// Include the shock day itself in impact sums.
    #[arg(long)]
    sum_from_landfall: bool,
    /// Output directory; overrides the config file and IMPACTOR_OUTPUT_DIR.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (Command::Simulate(args)
    | Command::Evaluate(args)
    | Command::Impact(args)
    | Command::Hbm(args)
    | Command::Report(args)) = &cli.command;
    let ov = Overrides {
        seed: args.seed,
        workers: args.workers,
        strategy: args.strategy,
        min_mean: args.min_mean,
        sum_from_landfall: args.sum_from_landfall,
        output: args.output.clone(),
    };
    let resolved = RunConfig::load(&args.config)?.resolve(&args.config, &ov)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = resolved.config.workers {
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::new(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(_) => commands::simulate::run(&resolved),
        Command::Evaluate(_) => commands::evaluate::run(&resolved),
        Command::Impact(_) => commands::impact::run(&resolved),
        Command::Hbm(_) => commands::hbm::run(&resolved),
        Command::Report(_) => commands::report::run(&resolved),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("impactor: {n} failure(s), see failures.csv");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("impactor: error: {e}");
            ExitCode::from(2)
        }
    }
}
