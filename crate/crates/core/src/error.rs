use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("steering angle {delta} rad is too close to the tan(delta) singularity")]
    SingularSteering { delta: f64 },

    #[error("integration produced a non-finite state")]
    NonFiniteState,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter shapes do not match")]
    ShapeMismatch,

    #[error("smoothing window {window} exceeds sequence length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty training batch")]
    EmptyBatch,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("empty series")]
    EmptySeries,

    #[error("series needs at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
