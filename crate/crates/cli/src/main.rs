//! `tvqmle`: simulate, fit, band, cross-validate and run coverage studies
//! for time-varying VARMA and multivariate GARCH models.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] tvqmle::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use tvqmle::Error as E;
        match self {
            CliError::Numerical(_) => 1,
            CliError::Core(
                E::InvalidBandwidth(_)
                | E::InvalidParams(_)
                | E::InvalidSpec(_)
                | E::InvalidSeries(_)
                | E::InsufficientReplications(_)
                | E::Precondition(_),
            ) => 2,
            CliError::Core(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tvqmle", version, about = "Local linear QMLE and simultaneous confidence bands for time-varying VARMA and MGARCH models")]
pub struct Cli {
    /// Worker threads, 0 for one per core (results do not depend on this).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a built-in data-generating process to CSV.
    Simulate(SimulateArgs),
    /// Fit the coefficient curves and their sandwich covariances.
    Fit(FitArgs),
    /// Simultaneous confidence band for selected coordinates.
    Band(BandArgs),
    /// Leave-one-out cross-validation of the bandwidth.
    Cv(CvArgs),
    /// Monte Carlo coverage of the bands on a built-in process.
    Coverage(CoverageArgs),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelKind {
    Varma,
    Mgarch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DgpKind {
    Dgp1,
    Dgp2,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "varma")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    /// VARMA with scalar AR matrices `A_j = a_j I`.
    #[arg(long)]
    pub final_equations: bool,
    /// VARMA intercept.
    #[arg(long)]
    pub intercept: bool,
    /// Latent-state recursion horizon (omit for the full recursion).
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "dgp1")]
    pub dgp: DgpKind,
    /// Sample size.
    #[arg(long = "T", default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub h: f64,
    /// Number of equally spaced points on `[h, 1 - h]`.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    #[arg(long)]
    pub input: PathBuf,
    /// Curve CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Covariance CSV (row-major `Sigma_theta` per grid point).
    #[arg(long)]
    pub cov_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Multiplier bootstrap replications.
    #[arg(long = "R", default_value_t = 1000)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 1-based parameter indices.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub select: Vec<usize>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Candidate bandwidths (default: log-spaced on [0.1, 0.45] with 2h < 0.5).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub input: PathBuf,
    /// Scores CSV (standard output when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum, default_value = "dgp1")]
    pub dgp: DgpKind,
    #[arg(long = "T", default_value_t = 1000)]
    pub n: usize,
    /// Bandwidths (default 0.4 for dgp1, 0.45 for dgp2).
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "0.10,0.05")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long = "R", default_value_t = 500)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recursion horizon of the fitted model (default 50 for dgp1, 30 for dgp2).
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw random orders of the same family for each configuration.
    #[arg(long)]
    pub vary: bool,
    /// Set the mean or recursion coefficients to zero.
    #[arg(long)]
    pub zero_coef: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub hess_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
