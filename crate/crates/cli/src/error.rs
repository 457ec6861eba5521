use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing required keys: {0}")]
    Missing(String),
    #[error("unknown key '{0}'")]
    Unknown(String),
    #[error("duplicate key '{0}'")]
    Duplicate(String),
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("invalid value '{value}' for key '{key}': {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] singular_hjb::Error),
}

impl CliError {
    pub fn invalid(key: &str, value: &str, reason: &str) -> Self {
        Self::Invalid { key: key.into(), value: value.into(), reason: reason.into() }
    }

    /// Key the error is about, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Unknown(k) | Self::Duplicate(k) => Some(k),
            Self::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}
