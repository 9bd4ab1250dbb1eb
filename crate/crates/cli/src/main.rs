//! `entailgen`: prepare SNLI, train, generate, build inference chains and evaluate.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "entailgen", version, about = "Entailment generation with an attentive LSTM encoder-decoder")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Single-threaded, reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// TOML file with defaults; command-line flags win over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter SNLI 1.0 to entailment pairs and build the vocabulary.
    Prepare(commands::prepare::PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(commands::train::TrainArgs),
    /// Greedy generation, one output line per input line.
    Generate(commands::generate::GenerateArgs),
    /// Recursive inference chains and the entailment graph.
    Chain(commands::chain::ChainArgs),
    /// Corpus BLEU, annotation samples and verdict tallies.
    Eval(commands::eval::EvalArgs),
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
