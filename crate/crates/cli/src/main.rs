//! Command-line harness: dataset synthesis, detector fitting, scoring,
//! evaluation, hyper-parameter sweeps, and timing benchmarks.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 data/format,
//! 5 numerical failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use nnk_ood::Error;

#[derive(Parser)]
#[command(
    name = "nnk-ood",
    about = "NNK-Means soft clustering and baselines for OOD detection over precomputed embeddings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ID/OOD benchmark dataset
    Synth(commands::synth::SynthArgs),
    /// Fit a detector and write a model file
    Fit(commands::fit::FitArgs),
    /// Score queries with a fitted model
    Score(commands::score::ScoreArgs),
    /// Compute AUROC/AUPR/FPR@95 from scores and OOD flags
    Eval(commands::eval::EvalArgs),
    /// Grid-search dictionary size and entropy weight on a validation split
    Sweep(commands::sweep::SweepArgs),
    /// Compare methods on one query set, with timed scoring
    Bench(commands::bench::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::Bench(args) => commands::bench::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Precondition(_) => 3,
        Error::Format(_) | Error::Data(_) | Error::Shape(_) | Error::Metric(_) | Error::Io(_) => 4,
        Error::Singular(_) | Error::Convergence(_) | Error::Generation(_) | Error::Internal(_) => 5,
    }
}
