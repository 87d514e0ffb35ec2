//! Command-line driver for the quantum near-field imaging toolkit.
//!
//! Exit codes: 0 success, 2 configuration or format error, 3 model
//! degeneracy, 4 hard numeric failure.

mod commands;
mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use qni_core::CoreError;

#[derive(Parser)]
#[command(name = "qni", about = "Quantum near-field imaging with intensity correlations", version)]
struct Cli {
    /// worker threads (default: available parallelism)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// override the configured RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a correlation dataset from a configured scene
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// do not embed the true transmissions in the dataset
        #[arg(long)]
        no_truth: bool,
        /// coefficient-tensor cache file (written if absent or stale)
        #[arg(long)]
        tensor_cache: Option<PathBuf>,
    },
    /// Run the sliding-window reconstruction on a dataset
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// also render the profile as SVG
        #[arg(long)]
        svg: bool,
    },
    /// Fisher-information report for the configured scene
    AnalyzeFim {
        #[arg(long)]
        config: PathBuf,
        /// evaluate at uniform transmission instead of the object
        #[arg(long)]
        at_uniform: bool,
        /// diagnostic: report on an identity matrix of the given size
        #[arg(long, hide = true)]
        debug_identity_fim: Option<usize>,
    },
    /// Sweep the source correlation width
    SweepWidth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form (and optional Monte Carlo) clip-at-one estimator curves
    BiasDemo {
        /// per-event Fisher information of the single parameter
        #[arg(long)]
        f11: f64,
        #[arg(long)]
        events: u64,
        #[arg(long, default_value_t = 11)]
        grid_points: usize,
        /// Monte Carlo trials for the verification columns (0 disables)
        #[arg(long, default_value_t = 0)]
        mc_trials: usize,
    },
    /// Fit the correlation width from a second-order dataset
    FitWidth {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Degenerate(_) | CoreError::NoDominantPixelSize { .. } => 3,
                CoreError::RankDeficient { .. }
                | CoreError::GammaOutOfRange { .. }
                | CoreError::FitFailed(_)
                | CoreError::NegativeProbability { .. } => 4,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .ok();
    }
    let load = |path: &Path| -> anyhow::Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, dir))
    };
    match &cli.command {
        Command::Simulate { config, no_truth, tensor_cache } => {
            let (cfg, dir) = load(config)?;
            commands::cmd_simulate(&cfg, &dir, &cli.out, cli.seed, *no_truth, tensor_cache.as_deref())
        }
        Command::Reconstruct { config, dataset, svg } => {
            let (cfg, _) = load(config)?;
            commands::cmd_reconstruct(&cfg, dataset, &cli.out, *svg)
        }
        Command::AnalyzeFim { config, at_uniform, debug_identity_fim } => {
            let (cfg, dir) = load(config)?;
            commands::cmd_analyze_fim(&cfg, &dir, &cli.out, *at_uniform, *debug_identity_fim)
        }
        Command::SweepWidth { config } => {
            let (cfg, dir) = load(config)?;
            commands::cmd_sweep_width(&cfg, &dir, &cli.out)
        }
        Command::BiasDemo { f11, events, grid_points, mc_trials } => commands::cmd_bias_demo(
            *f11,
            *events,
            *grid_points,
            *mc_trials,
            &cli.out,
            cli.seed.unwrap_or(0),
        ),
        Command::FitWidth { dataset } => commands::cmd_fit_width(dataset, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
