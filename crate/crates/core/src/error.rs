use thiserror::Error;

#[derive(Debug, Error)]
pub enum PbpoError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("reward granularity does not match the environment")]
    GranularityMismatch,

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
}

impl PbpoError {
    pub fn config(msg: impl Into<String>) -> Self {
        PbpoError::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PbpoError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PbpoError>;
