use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("{0} is undefined for this model head")]
    UnsupportedHead(&'static str),

    #[error("step {step} is past the schedule horizon {total_steps}")]
    StepOutOfRange { step: usize, total_steps: usize },

    #[error("trajectories do not share an evaluation grid: {0}")]
    MismatchedGrid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
