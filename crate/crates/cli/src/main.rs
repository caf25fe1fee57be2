//! `flexdet`: data generation, supernet training, architecture search,
//! evaluation and benchmarking from the command line.

mod commands;
mod manifest;
mod plot;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{bench, datagen, eval, search, train};

#[derive(Parser, Debug)]
#[command(
    name = "flexdet",
    version,
    about = "Train, search, evaluate and benchmark elastic detection transformers"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory receiving reports, artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic shapes dataset in COCO format.
    Datagen(datagen::Args),
    /// Train a weight-sharing supernet.
    Train(train::Args),
    /// Grid-search a space with fixed weights and extract the Pareto frontier.
    Search(search::Args),
    /// Measure accuracy and buffered latency of one artifact.
    Bench(bench::Args),
    /// Evaluate an artifact, optionally with config overrides or a sweep.
    Eval(eval::Args),
}

/// How a successful command ended.
pub enum Outcome {
    Complete,
    /// Some work items failed and were recorded in the report.
    Partial,
}

pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub argv: Vec<String>,
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
    let ctx = Context {
        seed: cli.seed,
        out_dir: cli.out_dir,
        argv: std::env::args().collect(),
    };
    let result = std::fs::create_dir_all(&ctx.out_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| match cli.command {
            Command::Datagen(a) => datagen::run(&ctx, a),
            Command::Train(a) => train::run(&ctx, a),
            Command::Search(a) => search::run(&ctx, a),
            Command::Bench(a) => bench::run(&ctx, a),
            Command::Eval(a) => eval::run(&ctx, a),
        });
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
