use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("cannot differentiate a non-scalar of shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("row {row} is not a probability distribution (sum {sum}, min {min})")]
    NotOnSimplex { row: usize, sum: f64, min: f64 },

    #[error("anchor {0} has no positive in the multiview batch")]
    NoPositive(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid `{key}`: {reason}")]
    Config { key: &'static str, reason: String },

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("dataset is unlabeled")]
    Unlabeled,

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest {}: {reason}", path.display())]
    BadManifest { path: PathBuf, reason: String },

    #[error("record count mismatch in {}: manifest declares {declared} records, file holds {actual}", path.display())]
    RecordCountMismatch {
        path: PathBuf,
        declared: usize,
        actual: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            key,
            reason: reason.into(),
        }
    }
}
