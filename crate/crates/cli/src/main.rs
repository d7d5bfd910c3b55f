//! `netcoupler`: reproducible pipelines for simulation, hyper-parameter
//! training, coupling inference and benchmarking. Numeric settings come from a
//! JSON config; flags only name paths.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Parser)]
#[command(
    name = "netcoupler",
    version,
    about = "Directed coupling inference from time-shifted measurements"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset (generative model, or the neural generator
    /// when the config has a `neuro` section).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the amortized hyper-parameter posterior.
    TrainFavi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the coupling posterior to one dataset.
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// Signal CSV; its sidecar is the same path with a `.json` extension.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Hyper-parameter checkpoint manifest (`favi.json`).
        #[arg(long)]
        hp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the mean-field baseline to one dataset.
    InferBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a benchmark suite, fit both methods and score them.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a trained checkpoint instead of training one.
        #[arg(long)]
        hp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Directed outflow per node from a posterior summary CSV.
    Outflow {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out } => commands::simulate(&RunConfig::load(&config)?, &out),
        Command::TrainFavi { config, out } => {
            commands::train(&RunConfig::load(&config)?, &out).map(|_| ())
        }
        Command::Infer {
            config,
            dataset,
            hp,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dataset = commands::resolve_path(dataset, &cfg.io.dataset, "dataset")?;
            let hp =
                commands::resolve_path(hp, &cfg.io.hp_checkpoint, "hyper-parameter checkpoint")?;
            commands::infer(&cfg, &dataset, &hp, &out)
        }
        Command::InferBaseline {
            config,
            dataset,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dataset = commands::resolve_path(dataset, &cfg.io.dataset, "dataset")?;
            commands::infer_baseline(&cfg, &dataset, &out)
        }
        Command::Bench { config, hp, out } => {
            let cfg = RunConfig::load(&config)?;
            let hp = hp.or_else(|| cfg.io.hp_checkpoint.clone());
            commands::bench(&cfg, hp.as_deref(), &out)
        }
        Command::Outflow { summary, out } => commands::outflow(&summary, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code as u8)
        }
    }
}
