use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A dimension or shape in the problem data does not match its declared signature.
    #[error("dimension mismatch in `{field}`: {detail}")]
    Dimension { field: String, detail: String },

    /// A user-supplied map returned a non-finite value.
    #[error("non-finite value from {what} at {point}")]
    Evaluation { what: String, point: String },

    /// A caller-side precondition failed (control outside U, negative jump, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite state or value encountered during a solve or simulation.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
