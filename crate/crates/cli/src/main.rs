//! `epvt` command-line driver.
//!
//! Exit status: 0 on success, 1 on usage errors (bad flags, unreadable or
//! invalid configuration), 2 when a command fails while running.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "epvt", version, about = "Synthetic-data EPVT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate dataset manifests (manifest.csv).
    GenData,
    /// Train a model (model.ckpt, train_log.csv).
    Train,
    /// Score a checkpoint on a manifest split (eval.csv).
    Eval,
    /// Run the trap-set bias sweep (sweep.csv).
    TrapSweep,
    /// Distance and prompt-weight analysis (analysis.csv, weights.csv, correlation.csv).
    Analyze,
}

/// Why a run failed, which decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<epvt::EpvtError> for Failure {
    fn from(e: epvt::EpvtError) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let (Some(config), Some(out)) = (cli.config, cli.out) else {
        eprintln!("error: --config and --out are required");
        return ExitCode::from(1);
    };
    let inv = commands::Invocation {
        command: cli.command,
        config,
        out,
        seed: cli.seed,
    };
    match commands::run(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
