use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input tensors or maps whose shapes or contents an operation rejects.
    #[error("rejected input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// API misuse, such as running a backward pass without a forward trace.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { loss: f64, epoch: usize, batch: usize },

    /// Dataset contents unsuitable for the requested computation.
    #[error("data error: {0}")]
    Data(String),

    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for command-line use: 2 for usage and configuration
    /// problems, 3 for unusable data, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Usage(_) | Error::Json(_) | Error::Io { .. } => 2,
            Error::Data(_) | Error::Format { .. } | Error::Csv(_) => 3,
            Error::NonFinite { .. } => 1,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
