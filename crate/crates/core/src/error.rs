use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("empty subset")]
    EmptySubset,

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least 2 samples for a variance test, got {0}")]
    TooFewSamples(usize),

    /// A gradient (sampled or averaged) has vanished; the run has converged
    /// or the direction is meaningless.
    #[error("degenerate gradient: norm {0:e} below threshold")]
    Degenerate(f64),

    #[error("non-positive curvature estimate {0:e}")]
    NonPositiveCurvature(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
