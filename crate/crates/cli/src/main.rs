//! `odl`: dataset generation, training, evaluation and cost-accuracy sweeps.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Problem;
use crate::report::{EvalOptions, Split};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration (exit 2).
    Usage(String),
    /// Numerical or IO failure (exit 1).
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<odl_core::Error> for CliError {
    fn from(e: odl_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "odl", version, about = "Kernel operator learning benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Generate {
        problem: Problem,
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test: usize,
        /// Points per axis (problem default when omitted).
        #[arg(long)]
        grid_size: Option<usize>,
        /// Burgers viscosity.
        #[arg(long)]
        nu: Option<f64>,
        /// Burgers final time.
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (defaults to `$ODL_DATA_DIR/<problem>-seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit (and optionally tune) a model and save it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Model directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset directory (overrides the config's dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a saved model and write JSON + CSV reports.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory (defaults to the one the model was trained on).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Report directory (defaults to the model directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        with_uq: bool,
        #[arg(long)]
        flops: bool,
    },
    /// Train and evaluate every variant of a config; writes cost_accuracy.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Variants run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            problem,
            train,
            test,
            grid_size,
            nu,
            t_final,
            seed,
            out,
        } => commands::generate(commands::GenerateArgs {
            problem,
            train,
            test,
            grid_size,
            nu,
            t_final,
            seed,
            out,
        }),
        Command::Train {
            config,
            seed,
            out,
            dataset,
        } => commands::train(commands::resolve_config(&config, seed, out, dataset)?),
        Command::Eval {
            model,
            dataset,
            split,
            out,
            with_uq,
            flops,
        } => commands::eval(commands::EvalArgs {
            model,
            dataset,
            out,
            opts: EvalOptions { split, with_uq, flops },
        }),
        Command::Sweep { config, seed, out, jobs } => {
            commands::sweep(commands::resolve_config(&config, seed, out, None)?, jobs)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
