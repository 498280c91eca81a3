use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("row index {index} out of range for store of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid triplet ({q}, {p}, {n}): indices must be distinct")]
    InvalidTriplet { q: usize, p: usize, n: usize },

    #[error("triplet list is empty")]
    EmptyTriplets,

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("row `{id}` has zero norm and cannot be normalized")]
    ZeroNorm { id: String },

    #[error("row `{id}` contains a non-finite value")]
    NonFinite { id: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown id(s): {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("store has no labels")]
    MissingLabels,

    #[error("invalid value for `{field}`: {msg}")]
    InvalidParam { field: &'static str, msg: String },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("loss became non-finite at iteration {iter}")]
    Diverged { iter: usize },

    #[error("{0}")]
    Insufficient(String),

    #[error("{0}")]
    TooLarge(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(field: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            msg: msg.into(),
        }
    }
}
