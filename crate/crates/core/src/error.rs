use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed MetaImage header: {0}")]
    Header(String),

    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("unsupported element type `{0}`")]
    ElementType(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dims {dims:?} are not divisible by {divisor}")]
    Divisibility { dims: [usize; 3], divisor: usize },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint tensors do not match the graph (missing: {missing:?}, unexpected: {unexpected:?})")]
    NameMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("label map contains no foreground voxels")]
    EmptyLabels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
