use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-length rotation axis")]
    ZeroAxis,

    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation6D(String),

    #[error("procrustes needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("point count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("rank-deficient cross-covariance (singular values {0:?})")]
    RankDeficient([f64; 3]),

    #[error("all alignment weights are zero")]
    ZeroWeights,

    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(String),

    #[error("parameter size mismatch for {what}: expected {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("joint hierarchy is not a parent-before-child tree (joint {joint}, parent {parent})")]
    InvalidHierarchy { joint: usize, parent: usize },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("ground-truth invariant violated: skull residual {0:e} mm")]
    GroundTruth(f64),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: u64, loss: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("incompatible file: {0}")]
    Incompatible(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
