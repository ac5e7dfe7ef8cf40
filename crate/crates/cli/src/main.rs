//! `decnn` command-line driver: train, probe and evaluate decodable networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Experiment;

#[derive(Parser, Debug)]
#[command(name = "decnn", version, about = "Decodable neural networks: training, probing and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the training seed and the sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Execution is single-threaded; values above 1 are accepted and ignored.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint.bin, metrics.log and resolved_config.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Export decoding grids for the first n correct and first n misclassified test examples.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Examples per outcome; defaults to `eval.probe_examples`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run one evaluation experiment and write its report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Repeat to evaluate an ensemble.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Defaults to `eval.experiment`.
        #[arg(long, value_enum)]
        experiment: Option<Experiment>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common } => commands::train(&common),
        Command::Probe { common, checkpoint, n } => commands::probe(&common, &checkpoint, n),
        Command::Eval {
            common,
            checkpoint,
            experiment,
        } => commands::eval(&common, &checkpoint, experiment),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
