//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "varhsmm",
    version,
    about = "Regularized VAR(p)-HSMM workflows: simulate, fit, decode, forecast, and compare",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate a series from a model JSON document
    Simulate(SimulateArgs),
    /// Fit a model by penalized EM, optionally selecting regularization by CV
    Fit(FitArgs),
    /// Decode the most likely state sequence with the Viterbi algorithm
    Decode(DecodeArgs),
    /// Rolling one-step-ahead forecasts over the last part of a series
    Forecast(ForecastArgs),
    /// Transform a positive price matrix into log returns
    Returns(ReturnsArgs),
    /// Lagged sample correlations with Fisher-z significance screening
    Correlate(CorrelateArgs),
    /// Rank candidate model specifications by held-out forecast MSFE
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Model JSON document
    #[arg(long)]
    pub model: PathBuf,
    /// Number of observations to generate
    #[arg(long)]
    pub length: usize,
    /// RNG seed (chacha12-boxmuller stream)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// Train/validation split and regularization grid flags shared by fit --cv
/// and compare.
#[derive(Args)]
pub struct SplitArgs {
    /// End of the training block (row count); overrides --train-frac
    #[arg(long)]
    pub train_end: Option<usize>,
    /// End of the validation block (row count); overrides --valid-frac
    #[arg(long)]
    pub valid_end: Option<usize>,
    /// Training fraction when --train-end is not given
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    /// Validation fraction when --valid-end is not given
    #[arg(long, default_value_t = 0.2)]
    pub valid_frac: f64,
    /// Comma-separated lambda_sigma grid (default: 15 log-spaced in [1e-4, 1])
    #[arg(long)]
    pub grid_sigma: Option<String>,
    /// Comma-separated lambda_a grid (default: 15 log-spaced in [0.1, 100])
    #[arg(long)]
    pub grid_a: Option<String>,
    /// Refit after every added observation instead of filtering forward
    #[arg(long, default_value_t = false)]
    pub refit_each_step: bool,
}

#[derive(Args)]
pub struct FitArgs {
    /// Data CSV (header row, one observation per row)
    #[arg(long)]
    pub data: PathBuf,
    /// Number of latent states M
    #[arg(long)]
    pub states: usize,
    /// Autoregression order p
    #[arg(long)]
    pub ar_order: usize,
    /// Maximum latent state duration D
    #[arg(long)]
    pub max_duration: usize,
    /// Covariance shrinkage strength (ignored with --cv)
    #[arg(long, default_value_t = 0.0)]
    pub lambda_sigma: f64,
    /// LASSO strength on AR coefficients (ignored with --cv)
    #[arg(long, default_value_t = 0.0)]
    pub lambda_a: f64,
    /// Select both strengths by grid search on one-step MSFE, then refit on
    /// train+validation at the winner
    #[arg(long, default_value_t = false)]
    pub cv: bool,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Maximum EM iterations
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Relative tolerance on the penalized objective
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Seed for the optional initialization jitter
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale of the optional mean jitter at initialization
    #[arg(long, default_value_t = 0.0)]
    pub init_jitter: f64,
    /// Exit with code 3 if EM does not converge
    #[arg(long, default_value_t = false)]
    pub strict: bool,
    /// Cap on parallel grid-cell workers
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Number of rolling one-step forecasts at the end of the series
    #[arg(long)]
    pub window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReturnsArgs {
    /// Price CSV (strictly positive entries)
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Correlation lag k
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
    /// Two-sided significance level
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate spec as M,p,D or M,p,D,label; repeatable
    #[arg(long, required = true)]
    pub candidate: Vec<String>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Maximum EM iterations per fit
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Relative tolerance on the penalized objective
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Seed recorded for reproducibility (initialization is deterministic)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on parallel workers
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}
