//! `pulsenet`: train and analyse pulse-level quantum classifiers on MNIST.

mod commands;
mod config;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "pulsenet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Check the MNIST files and report per-class counts.
    PrepareData,
    /// Train a model and write learning curves, a confusion matrix and checkpoints.
    Train,
    /// Evaluate a checkpoint on the validation split.
    Eval,
    /// Train every ablation variant at every configured seed.
    Ablate,
    /// Train clean and noise-aware models and compare them across noise levels.
    NoiseSweep,
    /// Compare exact control gradients with finite differences on random instances.
    Gradcheck,
    /// Dump a checkpoint's control schedule for one validation sample.
    InspectPulse {
        /// Index into the filtered validation split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring worker threads")?;
    }
    let snapshot = cfg.write_snapshot()?;
    println!("resolved config written to {}", snapshot.display());
    match cli.command {
        Command::PrepareData => commands::prepare_data(&cfg)?,
        Command::Train => commands::train(&cfg)?,
        Command::Eval => commands::eval(&cfg)?,
        Command::Ablate => commands::ablate(&cfg)?,
        Command::NoiseSweep => commands::noise_sweep_cmd(&cfg)?,
        Command::Gradcheck => {
            if !commands::gradcheck(&cfg)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::InspectPulse { sample } => {
            commands::inspect_pulse(&cfg, sample)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
