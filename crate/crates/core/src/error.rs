use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// FDTD time step violates the Courant limit.
    #[error("stability error: courant factor {0} exceeds 1")]
    Stability(f64),

    #[error("shape error: {0}")]
    Shape(String),

    /// Input that would force a division by zero or an undefined statistic.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("pruning of `{param}` at snapped value {snapped} left no rows (available: {available:?})")]
    Pruning {
        param: String,
        snapped: f64,
        available: Vec<f64>,
    },

    /// A required upstream artifact is missing.
    #[error("missing dependency: {}", .0.display())]
    Dependency(PathBuf),

    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, context: impl Into<String>) -> Self {
        Error::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
