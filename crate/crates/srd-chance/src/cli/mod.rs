//! Command-line experiment driver.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_converge, cmd_estimate, cmd_kl_study, cmd_optimize, cmd_variance_study, dump_operator,
    CommandOutput,
};
pub use config::{ExperimentConfig, ProblemKindConfig};

use crate::error::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "srd-chance",
    about = "Spherical-radial chance-constraint estimators and optimal control experiments",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Reduced-cost profile: coarser grid, capped schedules, fewer reps
    #[arg(long)]
    pub fast: bool,
    /// Override the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Record wall-clock timing in logs and the estimate CSV (breaks
    /// byte-reproducibility of that column)
    #[arg(long)]
    pub timing: bool,
    /// Dump the problem operator in coordinate format to this path
    #[arg(long)]
    pub dump_operator: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Single probability estimate with variance diagnostics
    Estimate(CommonArgs),
    /// RMSE of each estimator over a sample-count schedule
    Converge(CommonArgs),
    /// RMSE for several KL truncations against a finer reference
    KlStudy(CommonArgs),
    /// Elementary-estimator variances over a bound sweep
    VarianceStudy(CommonArgs),
    /// Chance-constrained optimization for each target level
    Optimize(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Estimate(a)
            | Command::Converge(a)
            | Command::KlStudy(a)
            | Command::VarianceStudy(a)
            | Command::Optimize(a) => a,
        }
    }
}

/// Load the configuration, apply overrides, run the command and write its
/// outputs. Returns the log lines.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let args = cli.command.common();
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if args.fast {
        cfg.apply_fast_profile();
    }
    if let Some(seed) = args.seed {
        cfg.sampling.seed = seed;
    }
    cfg.validate()?;

    if let Some(path) = &args.dump_operator {
        std::fs::write(path, dump_operator(&cfg)?)?;
    }

    let output = match &cli.command {
        Command::Estimate(_) => cmd_estimate(&cfg, args.timing)?,
        Command::Converge(_) => cmd_converge(&cfg)?,
        Command::KlStudy(_) => cmd_kl_study(&cfg)?,
        Command::VarianceStudy(_) => cmd_variance_study(&cfg)?,
        Command::Optimize(_) => cmd_optimize(&cfg, args.timing)?,
    };
    output.write_to(&args.out)?;
    Ok(output.log)
}
