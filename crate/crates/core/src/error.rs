use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate item `{0}`")]
    DuplicateItem(String),
    #[error("non-finite score {score} for item `{item}`")]
    NonFiniteScore { item: String, score: f64 },
    #[error("list entries out of score order at item `{item}`")]
    UnsortedList { item: String },
    #[error("tick {tick} is not after the latest buffered tick {latest}")]
    TickOrder { tick: u64, latest: u64 },
    #[error("feature `{feature}` needs protected and unprotected items (found {protected} / {unprotected})")]
    DegenerateFeature {
        feature: String,
        protected: usize,
        unprotected: usize,
    },
    #[error("feature `{0}` is never liked in the training ratings")]
    FeatureNeverLiked(String),
    #[error("no training ratings")]
    EmptyTraining,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{path}:{row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
