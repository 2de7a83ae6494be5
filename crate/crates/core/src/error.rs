use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state code {code}: {message}")]
    UnknownState { code: i32, message: String },

    #[error("invalid legend: {0}")]
    Legend(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular covariance: smallest eigenvalue {eigenvalue:e} along direction {direction:?}")]
    SingularCovariance { eigenvalue: f64, direction: Vec<f64> },

    #[error("covariance is not positive definite: eigenvalue {eigenvalue:e} along {direction:?}")]
    NotPositiveDefinite { eigenvalue: f64, direction: Vec<f64> },

    #[error("no pixel holds state {0}")]
    EmptyState(i32),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
