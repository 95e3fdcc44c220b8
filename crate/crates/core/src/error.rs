//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },

    #[error("unknown graph input `{0}`")]
    UnknownInput(String),

    #[error("unknown graph output `{0}`")]
    UnknownOutput(String),

    #[error("no tensor bound for input `{0}`")]
    MissingBinding(String),

    #[error("loss node `{node}` is not scalar (shape {shape:?})")]
    NonScalarLoss { node: String, shape: Vec<usize> },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX payload in {path}: expected {expected} bytes, found {found}")]
    IdxTruncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("bad checkpoint magic: expected \"AGL1\"")]
    CheckpointBadMagic,

    #[error("unsupported checkpoint version {0}")]
    CheckpointBadVersion(u32),

    #[error("malformed checkpoint: {0}")]
    CheckpointMalformed(String),

    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("class {0} out of range 0..{1}")]
    ClassOutOfRange(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
