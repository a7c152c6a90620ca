use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable corpus file {path}: {reason}")]
    CorpusFile { path: PathBuf, reason: String },

    #[error("invalid dataset file {path}, line {line}: {reason}")]
    DatasetSchema {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metadata client error: {0}")]
    Metadata(String),

    #[error("paper not found: {0}")]
    UnknownPaper(String),

    #[error("negative sampling exhausted attempt budget: achieved {achieved} of {requested} after {attempts} attempts")]
    SamplingExhausted {
        requested: usize,
        achieved: usize,
        attempts: u64,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
