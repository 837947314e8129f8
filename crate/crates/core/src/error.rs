//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory diverged at t = {time}: non-finite state")]
    Divergence { time: f64 },

    #[error("dictionary degree {degree} too small, missing true terms: {missing:?}")]
    InsufficientDegree { degree: usize, missing: Vec<String> },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dataset has no derivative matrix (required for this operation)")]
    MissingDerivatives,

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("noise column {column} has zero variance")]
    DegenerateNoise { column: usize },

    #[error("target is orthogonal to every dictionary column")]
    DegenerateTarget,

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("screening retained no terms; lower the magnitude threshold")]
    EmptyScreen,

    #[error("singular system: columns {0} and {1} are collinear (no ridge term to regularize)")]
    SingularSystem(usize, usize),

    #[error("rank-deficient least squares: dependent columns {0:?}")]
    RankDeficient(Vec<String>),

    #[error("exhaustive enumeration refused: C({n}, {k}) exceeds the 1e6 guard")]
    CombinatorialGuard { n: usize, k: usize },

    #[error("tuning failed: every grid cell was invalid")]
    TuningFailed,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
