use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LFSR taps {taps:#x} of order {order} are not maximal: observed period {period}, expected {expected}")]
    NonMaximalTaps {
        order: u32,
        taps: u32,
        period: u64,
        expected: u64,
    },

    #[error("correlation has no peak (received signal is all zero)")]
    NoPeak,

    #[error("reference point ({x}, {y}) is not part of the layout")]
    UnknownReferencePoint { x: f64, y: f64 },

    #[error("{source_name}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("nothing to export: {0}")]
    Empty(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
