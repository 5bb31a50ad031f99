//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("game validation failed: {0}")]
    InvalidGame(String),

    #[error("game {index} in dataset file is invalid: {reason}")]
    InvalidGameRecord { index: usize, reason: String },

    #[error("degenerate active set: target {target} is pinned at both bounds")]
    DegenerateActiveSet { target: usize },

    #[error("KKT system is singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("dataset split `{split}` is empty")]
    EmptySplit { split: &'static str },

    #[error("game is missing an evaluation attractiveness")]
    MissingEvaluationPhi,

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
