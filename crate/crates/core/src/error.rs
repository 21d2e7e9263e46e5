use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient timestamps: need at least 2, got {0}")]
    InsufficientTimestamps(usize),

    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotoneTimestamps { index: usize },

    #[error("no valid context at or before index {0}")]
    NoValidContext(usize),

    #[error("invalid frame {index}: {reason}")]
    InvalidFrame { index: usize, reason: String },

    #[error("{path}: row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("sequence too sparse: {valid} of {total} frames carry depth")]
    SequenceTooSparse { valid: usize, total: usize },

    #[error("insufficient calibration data: {used} usable pairs, need {needed}")]
    InsufficientCalibration { used: usize, needed: usize },

    #[error("rank deficient: lidar channel has no variance")]
    RankDeficient,

    #[error("invalid forecast: {0}")]
    InvalidForecast(String),

    #[error("forecaster backend failed: {0}")]
    Backend(String),

    #[error("non-finite feature in channel {0}")]
    NonFiniteFeature(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("gate weight {0} outside [0, 1]")]
    GateOutOfRange(f64),

    #[error("non-positive time step {0}")]
    NonPositiveDt(f64),

    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no frames to evaluate")]
    NoEvaluableFrames,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
