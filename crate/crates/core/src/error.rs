use thiserror::Error;

use crate::gridworld::MapError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation in {context}: expected length {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("network architectures differ: {0}")]
    ArchitectureMismatch(String),

    #[error("non-finite values in tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch of {size} particles is too small for k = {k} (need at least k + 1)")]
    BatchTooSmall { size: usize, k: usize },

    #[error("reward mode {mode} cannot be used during {phase}")]
    ModeMismatch { mode: String, phase: &'static str },

    #[error("map error: {0}")]
    Map(#[from] MapError),

    #[error("contract violation: step called on a terminal state")]
    TerminalStep,

    #[error(
        "degenerate task: regression produced a near-zero task vector (norm {norm:e}) \
         from {samples} samples; no reward was observed, increase the task-inference budget"
    )]
    DegenerateTask { norm: f64, samples: usize },

    #[error("replay buffer holds {len} transitions; sampling needs at least {min}")]
    ReplayUnderfilled { len: usize, min: usize },

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("non-finite {what} at step {step}")]
    NonFiniteLoss { what: &'static str, step: u64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::ShapeMismatch {
            context,
            expected,
            actual,
        }
    }
}
