use thiserror::Error;

/// Errors raised by the balancing, path and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero weight sum")]
    ZeroWeightSum,

    #[error("unbalanced group sums: treated {treated}, control {control}")]
    Unbalanced { treated: f64, control: f64 },

    #[error("weights are not normalized to the product simplex")]
    NotNormalized,

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("path failure at lambda = {lambda:.6e}: {message}")]
    PathFailure { lambda: f64, message: String },

    #[error("quadratic form is negative ({0:.3e}); kernel matrix is not PSD")]
    NotPsd(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("criterion infeasible: {0}")]
    CriterionInfeasible(String),

    #[error("problem too large: N = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
