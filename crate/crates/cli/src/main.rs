//! `dirl` — command-line driver for the domain-adaptation toolkit.
//!
//! Every command that trains or generates data leaves a self-describing run
//! directory under `<out>/<run_name>/`: the manifest it writes is enough to
//! reproduce the artifacts bit for bit.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors split by exit code: configuration/usage problems exit 2, failures
/// during an otherwise valid run exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<dirl_core::error::DirlError> for CliError {
    fn from(e: dirl_core::error::DirlError) -> Self {
        use dirl_core::error::DirlError;
        match e {
            DirlError::Config(_) | DirlError::Parse(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dirl",
    version,
    about = "Domain-invariant representation learning on 2D synthetic scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the scenario datasets as CSVs plus a manifest.
    #[command(name = "gen-data")]
    GenData(RunArgs),
    /// Train one model; writes traces, checkpoints, embeddings, and a manifest.
    Train(RunArgs),
    /// Train every mode on identical data and tabulate the final metrics.
    Compare(RunArgs),
    /// Recompute metrics for a finished training run from its manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override both the data seed and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the training mode (source_only|marginal_only|triplet_only|dirl).
    #[arg(long)]
    pub mode: Option<String>,
    /// Output root; artifacts land in `<out>/<run_name>/`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace an existing run directory of the same name.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// A run directory produced by `dirl train`.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIRL_KIT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Compare(args) => commands::compare(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
