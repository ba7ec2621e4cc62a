use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Mixed neural posterior estimation: simulate, train, sample, calibrate,
/// evaluate and benchmark.
#[derive(Debug, Parser)]
#[command(name = "mnpe", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw (θ, x) pairs from a model's prior and simulator.
    Simulate(SimulateArgs),
    /// Fit an estimator to a simulated dataset.
    Train(TrainArgs),
    /// Draw posterior samples for one observation.
    Sample(SampleArgs),
    /// Print the joint log density of one parameter vector.
    Logprob(LogprobArgs),
    /// SBC for continuous and reliability/ECE for discrete parameters.
    Calibrate(CalibrateArgs),
    /// C2ST against the model's reference posterior and predictive MSE.
    Evaluate(EvaluateArgs),
    /// Simulate, train and evaluate over a grid of budgets and seeds.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// gaussian_toy, tandem_queue or coal_changepoint.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV written by `simulate` (its sidecar must sit next to it).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Inline values (`1.0`, `3,4,1.5,2`), a file, or `historical` (coal).
    #[arg(long, allow_hyphen_values = true)]
    pub obs: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LogprobArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Discrete labels then continuous values, in `samples.csv` column order.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: String,
    #[arg(long, allow_hyphen_values = true)]
    pub obs: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Calibrate the model's reference posterior instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    pub reference: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Posterior draws per test pair.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Test observations for C2ST.
    #[arg(long)]
    pub observations: Option<usize>,
    /// Posterior draws per observation.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub mse_test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub task: Option<String>,
    /// Comma-separated simulation budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
