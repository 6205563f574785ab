use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bandwidth {0} outside (0, 0.5]")]
    InvalidBandwidth(f64),

    #[error("local linear design degenerate at tau={tau} with h={h}")]
    DegenerateDesign { tau: f64, h: f64 },

    #[error("no observations within the kernel window at tau={tau}")]
    EmptyWindow { tau: f64 },

    #[error("nonpositive conditional variance at t={t}")]
    NonPositiveVolatility { t: usize },

    #[error("singular conditional covariance at t={t}")]
    SingularCovariance { t: usize },

    #[error("invalid parameter point: {0}")]
    InvalidParams(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("least-squares design rank deficient (condition number {cond:.3e})")]
    RankDeficientDesign { cond: f64 },

    #[error("every bandwidth candidate failed to produce a finite score")]
    AllCandidatesFailed,

    #[error("local fit did not converge at tau={tau}")]
    FitFailed { tau: f64 },

    #[error("at least 100 bootstrap replications required, got {0}")]
    InsufficientReplications(usize),

    #[error("simulated path exploded at t={t}")]
    ExplosivePath { t: i64 },

    #[error("precondition violated: {0}")]
    Precondition(String),
}
