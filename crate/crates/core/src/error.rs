use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter `{name}` out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid return series: {0}")]
    InvalidSeries(String),

    #[error("window too short: {0}")]
    WindowTooShort(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("robust constraint is infeasible on the simplex (certified lower bound {lower_bound:.3e} > 0)")]
    Infeasible { lower_bound: f64 },

    #[error("no feasible iterate after {iterations} iterations")]
    MaxIter { iterations: usize },

    #[error("empty candidate menu")]
    EmptyMenu,

    #[error("classifier training diverged: {0}")]
    Training(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
