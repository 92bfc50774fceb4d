use std::path::PathBuf;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape4,
        rhs: Shape4,
    },

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("spatial dims {height}x{width} must be divisible by {divisor}")]
    Divisibility {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{stream} stream: {source}")]
    Stream {
        stream: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("payload length mismatch: header implies {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing normalization statistics at {}", .0.display())]
    MissingStats(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stream(self, stream: &'static str) -> Self {
        Error::Stream {
            stream,
            source: Box::new(self),
        }
    }
}
