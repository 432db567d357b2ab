use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed {what} at line {line}: {detail}")]
    Malformed {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("series {id:?} has no observed samples")]
    AllMissing { id: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("symbol id {id} is not valid for M = {m}")]
    InvalidSymbol { id: u32, m: u32 },

    #[error("token id {id} is outside the vocabulary (size {size})")]
    UnknownToken { id: u32, size: u32 },

    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabHashMismatch { expected: String, found: String },

    #[error("{context}: need at least {needed}, got {got}")]
    Insufficient {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("result undefined: {0}")]
    Undefined(&'static str),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
