use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ground-truth generation failed after {attempts} draws: {reason}")]
    GenerationFailure { attempts: usize, reason: String },

    #[error("divergence at step {step}: non-finite state")]
    Divergence { step: usize },

    #[error("chain {chain}: {source}")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate group {group}: total projection {total} is not positive")]
    DegenerateGroup { group: usize, total: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("no traces found in {0}")]
    NoTraces(String),

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(String),

    #[error("trace format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
