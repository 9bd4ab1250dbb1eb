use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tokenize: {0}")]
    Tokenize(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("vector file format error at {position}: {msg}")]
    VectorFormat { position: String, msg: String },

    #[error("checkpoint {path}: bad magic bytes")]
    BadMagic { path: PathBuf },

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("vocabulary hash mismatch: checkpoint {expected}, supplied {found}")]
    VocabHashMismatch { expected: String, found: String },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),

    #[error("all attention positions are masked")]
    AllMasked,

    #[error("generator failed after {} chain sentence(s): {source}", partial.len())]
    Generator {
        partial: Vec<Vec<String>>,
        #[source]
        source: Box<Error>,
    },

    #[error("graph node {0:?} would get a second distinct out-edge")]
    OutDegree(String),

    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("training aborted: {reason} (last good checkpoint: {last_good:?})")]
    TrainingAborted {
        reason: String,
        last_good: Option<PathBuf>,
    },

    #[error("unfilled verdicts on line(s) {0:?}")]
    UnfilledVerdicts(Vec<usize>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
