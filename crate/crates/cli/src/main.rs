//! `latact`: one binary for the whole pipeline, from demonstration data to
//! live teleoperation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "latact", version, about = "Latent action embeddings for redundant planar arms")]
pub struct Cli {
    /// Overrides the seed of the task (gen-data), model (train) or the seed list (eval).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a demonstration dataset from a task config.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Set or propose the latent-axis alignment of a model.
    Align(AlignArgs),
    /// Train and measure models on tasks across seeds.
    Eval(EvalArgs),
    /// Run the teleoperation service.
    Serve(ServeArgs),
    /// Replay a recorded input log and check its final state.
    Replay(ReplayArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// Binary dataset container (loadable by `train`).
    Binary,
    /// One {"s", "a", "traj"} object per line.
    Jsonl,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Task config (TOML).
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: DataFormat,
    /// Overrides the task's pair count.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model config (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Latent dimension; defaults to the one the dataset's task intends.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Fraction of trajectories held out to report a test MSE.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Propose and store an alignment after training.
    #[arg(long)]
    pub align: bool,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Model file to update (written back in place unless --out is given).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset used to locate the median state (needed by --auto).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Row-major entries of the transform, comma separated.
    #[arg(long, conflicts_with = "auto", allow_hyphen_values = true)]
    pub matrix: Option<String>,
    /// Search for the transform that best matches the task's canonical axes.
    #[arg(long)]
    pub auto: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model configs (TOML); the latent dimension comes from each task.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Task configs (TOML).
    #[arg(long, num_args = 1.., required = true)]
    pub tasks: Vec<PathBuf>,
    /// Metric config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Seeds as a list and/or ranges, e.g. `0-9` or `0,3,5`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Measures to leave out.
    #[arg(long, value_delimiter = ',')]
    pub skip: Vec<config::Measure>,
    /// Overrides the number of controllability pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    pub emit_plots: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Model files as `name=path` or `path` (named after the file stem).
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Task configs (TOML), named by their `name` field.
    #[arg(long = "task", required = true)]
    pub tasks: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Session tick rate; 0 runs sessions in lockstep.
    #[arg(long, default_value_t = 50.0)]
    pub tick_hz: f64,
    #[arg(long, default_value_t = 0.05)]
    pub deadzone: f64,
    /// Normalized novelty above which an out-of-distribution warning is sent.
    #[arg(long)]
    pub ood_radius: Option<f64>,
    /// Record every session's inputs for replay.
    #[arg(long)]
    pub record: bool,
    /// Directory of static UI assets to serve.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Input log (JSON Lines).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Task config the log was recorded on.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub deadzone: f64,
}

/// Problems with the invocation or its config files (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|cause| {
        cause.is::<UsageError>() || matches!(cause.downcast_ref::<latact_core::Error>(), Some(latact_core::Error::Config(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("LATACT_THREADS") {
        let n: usize = value
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("LATACT_THREADS must be a positive integer, got `{value}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("LATACT_LOG").init();
    let result = init_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
