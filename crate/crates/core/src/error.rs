use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty reduction")]
    EmptyReduction,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),

    #[error("epsilon must be finite and > 0, got {0}")]
    InvalidEpsilon(f64),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense Hessian too large: n = {n} exceeds limit {limit}")]
    DenseTooLarge { n: usize, limit: usize },

    #[error("eigensolver did not converge after {iterations} sweeps (best residual {best_residual:.3e})")]
    SpectralNotConverged {
        iterations: usize,
        best_residual: f64,
    },

    #[error("oracle did not converge (residual {residual:.3e})")]
    OracleNotConverged { residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}
