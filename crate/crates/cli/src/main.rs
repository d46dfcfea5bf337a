use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pinn_consolidation::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "consolidate",
    version,
    about = "Physics-informed networks for 1D consolidation"
)]
struct Cli {
    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the analytic pressure field on the configured grid
    Generate(RunArgs),
    /// Train a network on initial/boundary data plus the PDE residual
    TrainForward(TrainArgs),
    /// Train a network and the consolidation coefficient on sampled data
    TrainInverse(TrainArgs),
    /// Compare a saved model against a reference field CSV
    Evaluate(EvaluateArgs),
    /// Solve with Crank-Nicolson and compare against the analytic series
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir` from the config
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Seed, overriding `training.seed` from the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model JSON written by a training command
    #[arg(long)]
    model: PathBuf,
    /// Field CSV (`z,t,p_ratio`) to compare against
    #[arg(long)]
    reference: PathBuf,
    /// Directory for `evaluation.json`
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Field CSV to compare the finite-difference solution against
    #[arg(long)]
    compare: Option<PathBuf>,
}

/// Process exit codes.
const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_)) => EXIT_CONFIG,
        Some(Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::ShapeMismatch { .. }) => EXIT_IO,
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a.config, a.out_dir, quiet),
        Command::TrainForward(a) => {
            commands::train(commands::Kind::Forward, &a.run.config, a.run.out_dir, a.seed, quiet)
        }
        Command::TrainInverse(a) => {
            commands::train(commands::Kind::Inverse, &a.run.config, a.run.out_dir, a.seed, quiet)
        }
        Command::Evaluate(a) => commands::evaluate(&a.model, &a.reference, &a.out_dir, quiet),
        Command::Oracle(a) => commands::oracle(&a.run.config, a.run.out_dir, a.compare.as_deref(), quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
