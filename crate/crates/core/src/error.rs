use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} at position {position} is outside a vocabulary of {vocab}")]
    TokenOutOfRange { position: usize, id: usize, vocab: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown module group `{0}` (expected attention, ffn or all)")]
    UnknownGroup(String),

    #[error("unknown target module `{0}`")]
    UnknownModule(String),

    #[error("sequence of {len} tokens does not fit the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset of {available} pairs cannot supply {requested}")]
    InsufficientData { available: usize, requested: usize },

    #[error("{line}:{column}: {message}")]
    Lex { line: usize, column: usize, message: String },

    #[error("unbalanced property block: {0}")]
    Unbalanced(String),

    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
