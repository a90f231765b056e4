use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use siva_cli::commands::{cmd_identify, cmd_report, cmd_select, cmd_simulate, cmd_sindy, read_bundle, BUNDLE, SELECT_REPORT};
use siva_cli::config::RunConfig;

/// Adversarial system identification of nonlinear structural dynamics.
///
/// Log verbosity follows `RUST_LOG` (default `info`).
#[derive(Parser)]
#[command(name = "siva", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic (q, q̇, q̈) datasets from the configured model.
    Simulate(Common),
    /// Train the parameter generator and write the model bundle and epoch log.
    Identify(Common),
    /// Pick parameters with Approaches I-III and quantify their uncertainty.
    Select {
        #[command(flatten)]
        common: Common,
        /// Bundle written by `identify` (default: <out>/bundle.json).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Sparse-regression baseline on the training dataset.
    Sindy(Common),
    /// Measured versus simulated responses, spectra and an MSE table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Selection report written by `select` (default: <out>/select_report.json).
        #[arg(long)]
        selection: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<RunConfig> {
    Ok(RunConfig::load(&c.config, c.seed)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate(c) => {
            cmd_simulate(&load(&c)?, &c.out)?;
        }
        Command::Identify(c) => {
            cmd_identify(&load(&c)?, &c.out)?;
        }
        Command::Select { common, bundle } => {
            let cfg = load(&common)?;
            let bundle = read_bundle(&bundle.unwrap_or_else(|| common.out.join(BUNDLE)))?;
            cmd_select(&cfg, &bundle, &common.out)?;
        }
        Command::Sindy(c) => {
            cmd_sindy(&load(&c)?, &c.out)?;
        }
        Command::Report { common, selection } => {
            let cfg = load(&common)?;
            cmd_report(&cfg, &selection.unwrap_or_else(|| common.out.join(SELECT_REPORT)), &common.out)?;
        }
    }
    Ok(())
}
