//! Command-line laboratory: train policies, probe truncation divergence,
//! sweep hyperparameters, aggregate runs, and verify the sampling theory.

use clap::{Args, Parser, Subcommand};
use scs_core::cli;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "scs-lab", version, about = "Consistency-shaped RL on synthetic reasoning trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override config values, e.g. --set trainer.seed=42 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job into a fresh run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Root directory for run outputs (or SCS_LAB_RUN_ROOT, default ./runs).
        #[arg(long)]
        run_root: Option<PathBuf>,
        /// Fixed run-directory name instead of a timestamped one.
        #[arg(long)]
        out: Option<String>,
    },
    /// Measure mean distinct answers as a function of the truncation ratio.
    ProbeTruncation {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated truncation ratios in (0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        /// Resamples per trajectory (defaults to the config's sampler value).
        #[arg(long)]
        resamples: Option<usize>,
        /// Policy checkpoint to probe; defaults to the seeded initial policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run per (truncation ratio, resample count) grid cell.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated truncation-ratio grid.
        #[arg(long, value_delimiter = ',', required = true)]
        truncation_grid: Vec<f64>,
        /// Comma-separated resample-count grid.
        #[arg(long, value_delimiter = ',', required = true)]
        resample_grid: Vec<usize>,
        #[arg(long)]
        run_root: Option<PathBuf>,
        /// Fixed sweep-directory name (enables resuming).
        #[arg(long)]
        name: Option<String>,
    },
    /// Mean and t-interval of final metrics across comparable runs.
    Aggregate {
        /// Run directories produced by `train`.
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Output JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the closed-form distinct-option expectation against Monte
    /// Carlo over the standard grid; nonzero exit if any cell fails.
    VerifyTheory {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Shift the closed form by this amount (negative control for the
        /// pass/fail machinery; leave at 0 for real verification).
        #[arg(long, default_value_t = 0.0, hide = true)]
        inject_bias: f64,
    },
    /// Render CSV/JSON outputs into a markdown summary.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output markdown path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train { config, run_root, out } => {
            let root = cli::resolve_run_root(run_root.as_deref());
            let dir = cli::cmd_train(&config.config, &config.set, &root, out.as_deref())?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ProbeTruncation { config, ratios, resamples, checkpoint, out } => {
            cli::cmd_probe_truncation(
                &config.config,
                &config.set,
                &ratios,
                resamples,
                checkpoint.as_deref(),
                out.as_deref(),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, truncation_grid, resample_grid, run_root, name } => {
            let root = cli::resolve_run_root(run_root.as_deref());
            let dir = cli::cmd_sweep(
                &config.config,
                &config.set,
                &truncation_grid,
                &resample_grid,
                &root,
                name.as_deref(),
            )?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Aggregate { run_dirs, confidence, out } => {
            cli::cmd_aggregate(&run_dirs, confidence, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyTheory { trials, seed, out, inject_bias } => {
            let all_pass = cli::cmd_verify_theory(trials, seed, out.as_deref(), inject_bias)?;
            if all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verify-theory: at least one grid cell failed the 3-standard-error criterion");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Report { inputs, out } => {
            cli::cmd_report(&inputs, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
