use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use socialfl::harness::{execute, load_config, Experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "socialfl", version, about = "Social-trust federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config. Without it, defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Coalition formation against the non-cooperative baseline.
    Coalition,
    /// Multi-height consensus with fault injection.
    Consensus,
    /// Collusion attack sweep on watermark verification.
    Provenance,
    /// Coalition, FL rounds, consensus and ownership verification end to end.
    Pipeline,
    /// Every experiment above.
    All,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::with_seed(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let exps: Vec<Experiment> = match cli.command {
        Command::Coalition => vec![Experiment::Coalition],
        Command::Consensus => vec![Experiment::Consensus],
        Command::Provenance => vec![Experiment::Provenance],
        Command::Pipeline => vec![Experiment::Pipeline],
        Command::All => Experiment::ALL.to_vec(),
    };
    for exp in exps {
        for path in execute(exp, &cfg, &out)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
