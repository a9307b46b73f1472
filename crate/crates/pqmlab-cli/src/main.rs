//! Command-line entry point: simulate -> annotate -> train -> eval ->
//! validate pipelines over file-based artifacts, with seeded
//! reproducibility and manifest digests.
//!
//! Exit codes: 0 success, 1 property/verification failure, 2 configuration
//! error. Seed precedence: --seed flag, then the PQMLAB_SEED environment
//! variable, then the config file.

mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or unusable inputs -> exit 2.
    Config(String),
}

#[derive(Parser)]
#[command(
    name = "pqmlab",
    version,
    about = "Synthetic laboratory for process reward modeling as Q-value ranking"
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides PQMLAB_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data generation, annotation, and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test corpora and candidate pools.
    Simulate,
    /// Annotate the training corpus with Monte-Carlo completions.
    Annotate,
    /// Train the configured step scorer.
    Train,
    /// Evaluate the checkpoint and reference scorers over the pools.
    Eval,
    /// Run the assumption/theorem/shaping/gradient validation battery.
    Validate,
    /// Re-hash all files recorded in the stage manifests.
    VerifyManifest,
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let experiment = config::load_experiment(config_path, cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Simulate => pipeline::cmd_simulate(&experiment, cli.quiet).map(|()| true),
        Command::Annotate => pipeline::cmd_annotate(&experiment, cli.quiet).map(|()| true),
        Command::Train => pipeline::cmd_train(&experiment, cli.quiet).map(|()| true),
        Command::Eval => pipeline::cmd_eval(&experiment, cli.quiet).map(|()| true),
        Command::Validate => pipeline::cmd_validate(&experiment, cli.quiet),
        Command::VerifyManifest => pipeline::cmd_verify_manifest(&experiment, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
