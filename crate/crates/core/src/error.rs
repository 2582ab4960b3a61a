use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Input parsed but violates a data contract (missing preferred name,
    /// unresolved ids, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown concept id `{0}`")]
    UnknownConcept(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    /// Caller broke an operation's precondition (shape mismatch, empty span,
    /// reused tape).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Data-validation errors map to CLI exit code 2, everything else that
    /// is not a usage error to 3.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::UnknownConcept(_)
                | Error::UnknownRelation(_)
                | Error::Format { .. }
        )
    }
}
