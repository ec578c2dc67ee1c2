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

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

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

    /// Process exit code for the `mtp` binary.
    ///
    /// 1 usage, 2 I/O, 3 data, 4 model mismatch, 5 evaluation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 2,
            Error::Parse { .. } | Error::Schema { .. } | Error::Validation(_) | Error::Data(_) => 3,
            Error::Numeric(_) | Error::Shape { .. } => 3,
            Error::ModelMismatch(_) => 4,
            Error::Evaluation(_) => 5,
            Error::Config(_) => 2,
        }
    }
}
