use thiserror::Error;

use crate::bandwidth::SweepPoint;

pub type Result<T, E = SvddError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SvddError {
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (KKT gap {gap:.3e}, objective {objective:.12})")]
    Convergence {
        iterations: usize,
        gap: f64,
        objective: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("no zero of the second derivative found over {} sweep points", sweep.len())]
    PeakNotFound { sweep: Vec<SweepPoint> },

    #[error("training failed at bandwidth s = {s}: {source}")]
    SweepPoint {
        s: f64,
        #[source]
        source: Box<SvddError>,
    },

    #[error("class {class:?}: {source}")]
    Class {
        class: String,
        #[source]
        source: Box<SvddError>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used to map errors to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Convergence,
    Degenerate,
    Config,
    Io,
}

impl SvddError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SvddError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn in_class(self, class: impl Into<String>) -> Self {
        SvddError::Class {
            class: class.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            SvddError::Convergence { .. } => ErrorKind::Convergence,
            SvddError::Degenerate(_)
            | SvddError::InvalidTolerance(_)
            | SvddError::PeakNotFound { .. } => ErrorKind::Degenerate,
            SvddError::SweepPoint { source, .. } | SvddError::Class { source, .. } => {
                source.kind()
            }
            SvddError::Config(_) => ErrorKind::Config,
            SvddError::Io { .. } => ErrorKind::Io,
            SvddError::Input(_)
            | SvddError::DimensionMismatch { .. }
            | SvddError::Parse { .. }
            | SvddError::Format(_)
            | SvddError::Validation(_)
            | SvddError::Json(_) => ErrorKind::Input,
        }
    }
}
