use std::path::PathBuf;

/// Errors produced by the pipeline operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("infeasible overlap constraint: local crop area at most {local_max_area:.1} px^2 but {required_area:.1} px^2 of the global crop must be covered")]
    InfeasibleOverlap {
        local_max_area: f64,
        required_area: f64,
    },

    #[error("degenerate task: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
