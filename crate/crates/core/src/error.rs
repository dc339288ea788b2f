use std::path::PathBuf;

use crate::llm::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}` in {path}")]
    DuplicateId {
        kind: &'static str,
        id: String,
        path: PathBuf,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate corpus: no document produced any token")]
    DegenerateCorpus,

    #[error("LLM output contained no parsable topic")]
    EmptyExpansion,

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. }
            | Error::DuplicateId { .. }
            | Error::InvalidData(_)
            | Error::Io { .. }
            | Error::DegenerateCorpus
            | Error::EmptyExpansion => 3,
            Error::Provider(_) => 4,
            Error::Evaluation(_) => 5,
        }
    }
}
