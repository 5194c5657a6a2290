use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or axis disagreement between tensors.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Numeric domain violation (e.g. log of a non-positive value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's contract (wrong mode, empty input, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Bad configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data, with the 1-based line it came from when known.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structural problem in loaded data (arity mismatch, unknown id, ...).
    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
