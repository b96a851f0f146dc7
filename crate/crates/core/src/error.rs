use std::path::PathBuf;

/// Errors raised anywhere in the routing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("routing configuration misaligned with dataset: {0}")]
    Alignment(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("fingerprint mismatch for {what}: expected {expected}, found {found}")]
    FingerprintMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("external service failure: {0}")]
    External(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Coarse failure class, used by the command-line front end to pick an exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Alignment(_)
            | Error::Consistency(_)
            | Error::FingerprintMismatch { .. }
            | Error::Config(_)
            | Error::Serde(_) => ErrorClass::Validation,
            Error::Io { .. } => ErrorClass::Io,
            Error::UndefinedSimilarity(_) | Error::Numeric(_) => ErrorClass::Numeric,
            Error::External(_) => ErrorClass::External,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numeric,
    External,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
