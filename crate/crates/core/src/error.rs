use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    SymmetryViolation { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite: eigenvalue #{index} = {value:e} (largest {largest:e})")]
    NotPositiveDefinite { index: usize, value: f64, largest: f64 },

    #[error("total scatter is rank deficient: eigenvalue #{index} = {value:e} (largest {largest:e})")]
    RankDeficient { index: usize, value: f64, largest: f64 },

    #[error("cluster {label} has no observations")]
    MissingCluster { label: usize },

    #[error("label {label} out of range for k = {k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance of component {component} is not positive definite (Cholesky failed)")]
    Cholesky { component: usize },

    #[error("sample too small: {n} rows for dimension {d} (need at least {required})")]
    SampleSize { n: usize, d: usize, required: usize },

    #[error("overlap integral is only implemented for k = 2, got k = {0}")]
    UnsupportedComponentCount(usize),

    #[error("data is not centered: column {column} has mean {mean:e}")]
    NotCentered { column: usize, mean: f64 },

    #[error("unknown recipe `{name}`; valid names: {valid}")]
    UnknownRecipe { name: String, valid: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::SymmetryViolation { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::RankDeficient { .. }
            | Error::Cholesky { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            Error::Csv(e) if e.is_io_error() => ErrorKind::Io,
            _ => ErrorKind::Config,
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
