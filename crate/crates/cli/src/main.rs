//! `ftucker`: synthesize data, fit, predict, evaluate and export trajectories.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 inference
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ftucker::cep::{ModelKind, MomentMode};
use ftucker::Error;

#[derive(Debug, Parser)]
#[command(name = "ftucker", version, about = "Bayesian Tucker/CP decomposition over continuous-indexed tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the two-mode synthetic dataset and its ground-truth grid.
    Synth(SynthArgs),
    /// Fit a model and write `model.json`, `manifest.json`, `metrics.json` and `trace.csv`.
    Fit(FitArgs),
    /// Predict at the index tuples of a CSV.
    Predict(PredictArgs),
    /// Write `{rmse, mae}` of a model on a dataset.
    Eval(EvalArgs),
    /// Write per-mode factor trajectories on a uniform grid.
    ExportTraj(ExportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 650)]
    n: usize,
    /// Noise variance.
    #[arg(long, default_value_t = 0.02, conflicts_with = "noise_sd")]
    noise_var: f64,
    /// Noise standard deviation; overrides `--noise-var`.
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points per axis of the ground-truth grid.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Output directory; receives `data.csv` and `truth.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Tucker,
    Cp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MomentArg {
    Exact,
    Plugin,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with header `i_1,…,i_K,y`.
    #[arg(long)]
    data: PathBuf,
    /// Mode count; defaults to the header width minus one.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long = "model", value_enum, default_value_t = KindArg::Tucker)]
    kind: KindArg,
    /// Rank of every mode, or a comma-separated per-mode list.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    rank: Vec<usize>,
    /// Matérn smoothness, 0.5 or 1.5.
    #[arg(long, default_value_t = 1.5)]
    nu: f64,
    /// Kernel lengthscale in rescaled `[0, 1]` index units.
    #[arg(long, default_value_t = 0.1)]
    lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 1.0)]
    a0: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0.7)]
    damping: f64,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = MomentArg::Exact)]
    moment_mode: MomentArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads of the message phase; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV of index tuples, `K` columns or `K + 1` with a trailing value.
    #[arg(long)]
    index: PathBuf,
    /// Also write the predictive variance.
    #[arg(long)]
    with_var: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Grid points per mode, spanning the mode's training index range.
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Output directory; receives `mode_<k>.csv` for k = 1..K.
    #[arg(long)]
    out: PathBuf,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tucker => ModelKind::Tucker,
            KindArg::Cp => ModelKind::Cp,
        }
    }
}

impl From<MomentArg> for MomentMode {
    fn from(m: MomentArg) -> Self {
        match m {
            MomentArg::Exact => MomentMode::Exact,
            MomentArg::Plugin => MomentMode::Plugin,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Inference { .. } | Error::NotPositiveDefinite(_) => 3,
        Error::InvalidArgument(_) | Error::UnsupportedSmoothness(_) | Error::Dimension { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ExportTraj(a) => commands::export_traj(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
