use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("{op} requires a {expected} schedule")]
    WrongScheduleKind { op: &'static str, expected: &'static str },

    #[error("invalid schedule parameters: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward called without a matching forward pass")]
    NoForwardPass,

    #[error("r = {r} exceeds t = {t}")]
    IntervalOrder { r: f64, t: f64 },

    #[error("degenerate softmax: all importance weights vanished")]
    DegenerateSoftmax,

    #[error("batch of size {0} is too small for normalization (need >= 2)")]
    BatchTooSmall(usize),

    #[error("empty mixture")]
    EmptyMixture,

    #[error("replay buffer holds {have} transitions, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
