use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A text input did not follow its format. `line` is 1-based.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or parameter.
    #[error("diverged at epoch {epoch}{}: {message}", .item.map(|i| format!(", item {i}")).unwrap_or_default())]
    Diverged {
        epoch: usize,
        item: Option<usize>,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid IOB sequence at position {position}: {message}")]
    InvalidIob { position: usize, message: String },

    #[error("unsupported model version: {0}")]
    Version(String),

    #[error("model shape error: {0}")]
    Shape(String),

    #[error("truncated input: {0}")]
    Truncated(String),
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
