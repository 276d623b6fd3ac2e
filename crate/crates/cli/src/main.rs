use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stocheuler_cli::{run, threads_from_env, with_threads, CliError, Command, ExperimentConfig, Outcome};

/// Stochastic Euler verification experiments.
#[derive(Debug, Parser)]
#[command(name = "stocheuler", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(args: &Args) -> Result<Outcome, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let threads = threads_from_env()?;
    with_threads(threads, || run(args.command, &cfg, &out))?
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
