use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Batch or dataset width does not match the network input layer.
    #[error("input shape mismatch: expected {expected} features, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// A non-finite value showed up where training cannot continue.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Internal bookkeeping disagreed with the topology (usually a strategy bug).
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("connection budget exceeded: {requested} active requested, budget is {budget}")]
    Budget { requested: usize, budget: usize },

    /// Input ended early or could not be read as expected, positioned at `location`.
    #[error("input error in {path} at {location}: {message}")]
    Input {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Malformed file content, positioned at `location` (byte offset or row).
    #[error("format error in {path} at {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unsupported checkpoint version: {0}")]
    Version(String),

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
