use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DmpError>;

/// Coarse grouping of errors, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Numeric,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Validation => "validation",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum DmpError {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },
    #[error("system is not stable: {0}")]
    UnstableSystem(String),
    #[error("unsupported smoothness nu = {0}; expected 0.5, 1.5 or 2.5")]
    UnsupportedSmoothness(f64),
    #[error("all series must share the same smoothness")]
    MixedSmoothness,
    #[error("series {0} has non-positive input-noise variance")]
    DegenerateSeries(usize),
    #[error("dataset contains no observed values")]
    EmptyData,
    #[error("series {series} has {found} observed points, at least {required} are required")]
    TooFewObservations {
        series: usize,
        found: usize,
        required: usize,
    },
    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),
    #[error("posterior chain is empty")]
    EmptyChain,
    #[error("test values have zero variance")]
    DegenerateTruth,
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("time at line {line} is not greater than the previous time")]
    NonMonotoneTime { line: u64 },
    #[error("duplicate timestamp at line {line}")]
    DuplicateTimestamp { line: u64 },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DmpError {
    pub fn validation(msg: impl Into<String>) -> Self {
        DmpError::Validation(msg.into())
    }

    pub fn not_pd(context: impl Into<String>) -> Self {
        DmpError::NotPositiveDefinite {
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmpError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use DmpError::*;
        match self {
            NotPositiveDefinite { .. } | UnstableSystem(_) | OptimizerFailed(_) => {
                ErrorCategory::Numeric
            }
            Io { .. } => ErrorCategory::Io,
            UnsupportedSmoothness(_)
            | MixedSmoothness
            | DegenerateSeries(_)
            | EmptyData
            | TooFewObservations { .. }
            | EmptyChain
            | DegenerateTruth
            | Parse { .. }
            | NonMonotoneTime { .. }
            | DuplicateTimestamp { .. }
            | Validation(_) => ErrorCategory::Validation,
        }
    }
}
