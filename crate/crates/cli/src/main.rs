//! `gaas`: synthesize refinement interfaces, co-simulate them against the
//! abstract trajectory, and compare against the S = 0 baseline.
//!
//! Exit codes: 0 when every check passes, 1 when a check or verification
//! fails, 2 on usage or input errors.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Outcome};

#[derive(Debug, Parser)]
#[command(name = "gaas", version, about = "Interface synthesis and co-simulation for linear abstractions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scenario values that can be overridden without editing the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Closeness bound ε.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Decay rate a₁.
    #[arg(long)]
    pub a1: Option<f64>,
    /// Integration step h.
    #[arg(long)]
    pub step: Option<f64>,
    /// Simulation horizon in seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize gains and check every hypothesis; writes gains.json and report.json.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pin S to zero (baseline interface).
        #[arg(long)]
        force_s_zero: bool,
        /// Seed for the randomized optimality probes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulate with given gains; writes trajectory.csv, jumps.csv and verify.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write every n-th trajectory sample (jump samples and the last sample are always written).
        #[arg(long, default_value_t = 1)]
        csv_stride: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the synthesized interface and the S = 0 baseline on the same scenario.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        csv_stride: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the built-in double-integrator example end to end.
    Casestudy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        csv_stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Synthesize { config, out, force_s_zero, seed, overrides } => {
            commands::synthesize(&config, &out, force_s_zero, seed, &overrides)
        }
        Command::Simulate { config, gains, out, csv_stride, overrides } => {
            commands::simulate(&config, &gains, &out, csv_stride, &overrides)
        }
        Command::Compare { config, out, csv_stride, overrides } => commands::compare(&config, &out, csv_stride, &overrides),
        Command::Casestudy { out, csv_stride, seed, overrides } => commands::casestudy(&out, csv_stride, seed, &overrides),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
