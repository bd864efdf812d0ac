use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload length mismatch: header declares {expected} bytes, found {found}")]
    PayloadLength { expected: u64, found: u64 },

    #[error("manifest has {manifest} records but embedding file has {rows} rows")]
    ManifestCount { manifest: usize, rows: usize },

    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("zero-norm embedding for id {0:?}")]
    ZeroNorm(String),

    #[error("non-finite value in embedding for id {0:?}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid k={k}: must satisfy 1 <= k <= {count}")]
    InvalidK { k: usize, count: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown image id {0:?}")]
    UnknownId(String),

    #[error("id {0:?} is not in the working set")]
    OutsideWorkingSet(String),

    #[error("id {0:?} is not a member of the slice")]
    NotAMember(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate regression: all similarities are equal")]
    DegenerateFit,

    #[error("cyclic class hierarchy through {0:?}")]
    CyclicHierarchy(String),

    #[error("slice {slice:?} references {id:?}, which is not in the working set")]
    DanglingId { slice: String, id: String },

    #[error("snapshot schema violation: {0}")]
    Schema(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
