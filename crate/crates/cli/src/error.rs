use std::path::PathBuf;

use scm_core::ScmError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ScmError),

    #[error("{path}: {source}")]
    Tensor {
        path: PathBuf,
        #[source]
        source: ScmError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },

    #[error("{0}")]
    Input(String),

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("image ids differ: no prediction for [{}]; no annotation for [{}]", .missing_predictions.join(", "), .missing_annotations.join(", "))]
    IdMismatch {
        missing_predictions: Vec<String>,
        missing_annotations: Vec<String>,
    },

    #[error("{failed} of {total} gradient checks failed")]
    GradCheck { failed: usize, total: usize },

    #[error("flow did not settle within {steps} steps (residual {residual:.3e})")]
    NotSettled { steps: usize, residual: f64 },

    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),

    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn value(key: &str, message: impl Into<String>) -> Self {
        Self::Value {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
