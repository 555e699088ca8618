//! Crate-wide error type. Library functions return [`Result`]; the CLI maps
//! errors to exit code 1 and usage problems to exit code 2.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("bounding box has zero maximum extent; cloud cannot be normalized")]
    DegenerateExtent,

    #[error("requested {requested} points but only {available} are available")]
    BadCount { requested: usize, available: usize },

    #[error("need more than {k} points for {k} neighbors, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("coordinate {value} at point {index} lies outside the unit cube; normalize the cloud first")]
    NotNormalized { index: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("axis {axis} out of range for rank-{ndim} tensor")]
    AxisOutOfRange { axis: usize, ndim: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalarLoss { shape: Vec<usize> },

    #[error("parameter {name} has no gradient; run backward first")]
    MissingGrad { name: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("reference set is empty")]
    EmptyReferenceSet,

    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),

    #[error("occlusion left no points in the partial cloud")]
    DegenerateOcclusion,

    #[error("no matching ground-truth entry for {0}")]
    MissingPair(String),

    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: String, reason: String },

    #[error("loss became non-finite at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("malformed {format} data: {detail}")]
    BadFormat { format: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Helper for file-format errors.
    pub fn format(format: &str, detail: impl Into<String>) -> Self {
        Error::BadFormat {
            format: format.to_string(),
            detail: detail.into(),
        }
    }
}
