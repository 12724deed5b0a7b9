use std::path::PathBuf;

use thiserror::Error;

use crate::refine::RefineTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("estimation failed: {0}")]
    EstimationFailure(String),
    #[error("ambiguous decomposition: {0}")]
    AmbiguousDecomposition(String),
    #[error("rays do not intersect: {0}")]
    NoIntersection(String),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("empty scene")]
    EmptyScene,
    #[error("visibility: {0}")]
    Visibility(String),
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("numerical failure at iteration {iteration}")]
    NumericalFailure {
        iteration: usize,
        trace: Box<RefineTrace>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
