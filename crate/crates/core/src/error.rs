use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{reason} at line {line}")]
    Parse { line: usize, reason: String },

    #[error("trace too short for intervals: {events} event(s)")]
    TraceTooShort { events: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero variance in feature dimension {dimension} ({name})")]
    ZeroVariance { dimension: usize, name: &'static str },

    #[error("empty model")]
    EmptyModel,

    #[error("single-class training data: both classes are required")]
    SingleClass,

    #[error("SMO did not converge after {iterations} iterations (max violation {violation:.3e}, tol {tol:.1e})")]
    NotConverged {
        iterations: usize,
        violation: f64,
        tol: f64,
    },

    #[error("AUC undefined: ground truth has {positives} positive(s) and {negatives} negative(s)")]
    AucUndefined { positives: usize, negatives: usize },

    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
