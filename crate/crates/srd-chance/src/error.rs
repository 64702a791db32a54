use thiserror::Error;

/// Errors produced by grid construction, assembly, factorization, sampling
/// and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("operator/grid mismatch: {0}")]
    Mismatch(String),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    Definiteness { row: usize, pivot: f64 },

    #[error("KL truncation {requested} exceeds available modes {available}")]
    Truncation { requested: usize, available: usize },

    #[error("Slater condition violated at constraint point {point}: mean state {value:.6} outside ({lower:.6}, {upper:.6})")]
    Slater {
        point: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible starting control: {0}")]
    InfeasibleStart(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
