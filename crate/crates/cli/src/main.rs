//! `polylab`: experiment runner for sparkling saddle connections.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use polylab_core::{Error, Precision};

use config::Config;

#[derive(Parser)]
#[command(
    name = "polylab",
    version,
    about = "Sparkling saddle connections near hyperbolic polycycles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to the number of cores
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Arithmetic of the connection solver; overrides the config
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Interior and exterior connection sequences with slope fits
    Sparkle,
    /// Relative density of exterior to interior connections
    Density,
    /// Invariant functions of a chain over a parameter grid
    Diagram,
    /// Chain realizing a sampled diagram germ
    Realize,
    /// Integrated saddle Dulac maps against their asymptotic estimates
    OdeCheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Double,
    Extended,
}

/// 0 ok, 2 invalid input, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_invalid_input() => 2,
        Some(_) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => return Err(Error::Config("--config is required".into()).into()),
    };
    if let Some(p) = cli.precision {
        cfg.precision = Some(match p {
            PrecisionArg::Double => Precision::Double,
            PrecisionArg::Extended => Precision::Extended,
        });
    }
    if !cfg.precision().is_available() {
        return Err(Error::Unsupported(format!(
            "{} precision is not compiled in",
            cfg.precision()
        ))
        .into());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = output::prepare(&cli.out)?;
    match cli.command {
        Command::Sparkle => commands::sparkle(&cfg, &out),
        Command::Density => commands::density(&cfg, &out),
        Command::Diagram => commands::diagram(&cfg, &out),
        Command::Realize => commands::realize(&cfg, &out),
        Command::OdeCheck => commands::ode_check(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
