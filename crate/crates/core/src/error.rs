//! Error type shared across the toolkit.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor math, data ingestion, training and evaluation.
#[derive(Debug)]
pub enum Error {
    /// An operation received tensors of incompatible shapes.
    Shape { op: &'static str, detail: String },
    /// Invalid model or run configuration.
    Config(String),
    /// A NaN or infinity was produced where finite values are required.
    NonFinite { context: String },
    /// A data file could not be parsed.
    Parse {
        path: String,
        line: u64,
        detail: String,
    },
    /// A row references an id that does not resolve.
    MissingId {
        path: String,
        line: u64,
        detail: String,
    },
    /// The evaluation protocol cannot be satisfied.
    Protocol(String),
    /// An invalid argument was passed to an operation.
    Argument(String),
    /// Checkpoint format or model-kind mismatch.
    Checkpoint(String),
    /// Underlying I/O failure.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::Parse { path, line, detail } => {
                write!(f, "parse error in {path} line {line}: {detail}")
            }
            Error::MissingId { path, line, detail } => {
                write!(f, "unknown id in {path} line {line}: {detail}")
            }
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
