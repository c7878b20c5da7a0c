use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("format error in field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("truncated payload while reading `{field}`: expected {expected} bytes, found {found}")]
    Truncated {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("batch needs at least 2 pairs to form negatives, got {0}")]
    InsufficientNegatives(usize),

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("memory bank holds {have} entries, need at least {need}")]
    BankTooSmall { have: usize, need: usize },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
