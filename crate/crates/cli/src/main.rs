//! `agesim` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "agesim", version, about = "Freshness and trust metrics for split generative inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and write its event log, age series and summary.
    Run(ConfigArgs),
    /// Evaluate the scenario over the configured sweep variable.
    Sweep(ConfigArgs),
    /// Search partitions, sampling periods, verification periods or capacity shares.
    Optimize(ConfigArgs),
    /// Compare delay-oriented and AoGI-oriented partitions over edge capacities.
    Fig5(ConfigArgs),
    /// VaR, CVaR and EVaR of a file of peak ages.
    Metrics {
        /// One value per line; `#` comments and a header row are skipped.
        peaks: PathBuf,
        /// Failure probability in (0, 1].
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(short, long)]
    output_dir: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("error: {0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("AGESIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("AGESIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run(a) => commands::run(&a.config, a.output_dir),
        Command::Sweep(a) => commands::sweep(&a.config, a.output_dir),
        Command::Optimize(a) => commands::optimize(&a.config, a.output_dir),
        Command::Fig5(a) => commands::fig5(&a.config, a.output_dir),
        Command::Metrics { peaks, eps } => commands::metrics(&peaks, eps),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
