use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ScmError>;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("matrix is singular: pivot {pivot:.3e} in column {column} below threshold {threshold:.3e}")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("Newton-Schulz did not converge in {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("flow integration diverged at step {step} (|I| = {norm:.3e}); explicit Euler needs dt < {max_stable_dt:.3e}, and no step size helps if L has eigenvalues with non-negative real part")]
    Instability {
        step: usize,
        norm: f64,
        max_stable_dt: f64,
    },
}

impl ScmError {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScmError::Storage {
            path: path.into(),
            source,
        }
    }
}
