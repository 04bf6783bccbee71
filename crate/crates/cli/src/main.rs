//! `osr` — open set recognition experiments from the command line.
//!
//! Exit codes: 0 success, 1 user error (bad config, missing inputs),
//! 2 internal invariant failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use osr_core::pipeline::AblationMode;

use crate::artifacts::SplitKind;
use crate::config::{config_hash, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "osr",
    version,
    about = "Open set recognition via parameter-perturbation uncertainty and two-stage unknown detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    PerturbationOnly,
    NoIsda,
    NoDt,
}

impl From<ModeArg> for AblationMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Full => AblationMode::Full,
            ModeArg::PerturbationOnly => AblationMode::PerturbationOnly,
            ModeArg::NoIsda => AblationMode::NoIsda,
            ModeArg::NoDt => AblationMode::NoDt,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Prepare the dataset: synthesize blobs or ingest a CSV, then split.
    Synth(CommonArgs),
    /// Train the base classifier on the prepared training split.
    Train(CommonArgs),
    /// Score predictive uncertainty over an open split.
    Uncertainty {
        #[command(flatten)]
        common: CommonArgs,
        /// Which open split to score.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitKind,
    },
    /// Run the detection cascade over an open split.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitKind,
        /// Cascade ablation to run.
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Evaluate a results CSV into the five-metric report.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitKind,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
        /// Explicit results CSV (defaults to the split/mode path).
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Sweep (B, lambda, mu*, H2) candidates on the validation split.
    Gridsearch(CommonArgs),
    /// Emit per-group density histograms of the uncertainty scores.
    PlotDensity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitKind,
        /// Explicit mu CSV (defaults to the split's path).
        #[arg(long)]
        mu_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Also render an SVG alongside the CSV.
        #[arg(long)]
        svg: bool,
    },
}

fn load(common: &CommonArgs) -> Result<(ExperimentConfig, String)> {
    let config = ExperimentConfig::load(&common.config, common.seed, common.outdir.clone())?;
    let sha = config_hash(&common.config)?;
    Ok((config, sha))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(common) => {
            let (config, sha) = load(&common)?;
            commands::synth::run(&config, &sha)
        }
        Command::Train(common) => {
            let (config, sha) = load(&common)?;
            commands::train::run(&config, &sha)
        }
        Command::Uncertainty { common, split } => {
            let (config, sha) = load(&common)?;
            commands::uncertainty::run(&config, &sha, split)
        }
        Command::Detect {
            common,
            split,
            mode,
        } => {
            let (config, sha) = load(&common)?;
            commands::detect::run(&config, &sha, split, mode.into())
        }
        Command::Eval {
            common,
            split,
            mode,
            results,
        } => {
            let (config, sha) = load(&common)?;
            commands::eval::run(
                &config,
                &sha,
                split,
                commands::detect::mode_name(mode.into()),
                results,
            )
        }
        Command::Gridsearch(common) => {
            let (config, sha) = load(&common)?;
            commands::gridsearch::run(&config, &sha)
        }
        Command::PlotDensity {
            common,
            split,
            mu_csv,
            bins,
            svg,
        } => {
            let (config, sha) = load(&common)?;
            commands::plot::run(&config, &sha, split, mu_csv, bins, svg)
        }
    }
}

/// Internal invariant failures exit 2; everything else is a user error (1).
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core_err) = cause.downcast_ref::<osr_core::Error>() {
            match core_err {
                osr_core::Error::DimensionMismatch { .. }
                | osr_core::Error::DuplicateSampleId(_)
                | osr_core::Error::DegenerateProjection => return 2,
                _ => return 1,
            }
        }
    }
    1
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            if err.use_stderr() {
                err.print().ok();
                std::process::exit(1);
            }
            err.print().ok();
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}
