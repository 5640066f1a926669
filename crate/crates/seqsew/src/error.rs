use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument or configuration value.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data problem attributable to a specific round (1-based).
    #[error("data error at round {round}: {message}")]
    Data { round: usize, message: String },

    /// Operation called in the wrong state (e.g. observe before predict).
    #[error("state error: {0}")]
    State(String),

    /// Caller broke a documented precondition (η increase, tuning mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
