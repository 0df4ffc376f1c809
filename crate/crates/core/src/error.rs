use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("observation {observation} has zero probability under the predicted belief (step {step:?})")]
    DegenerateObservation {
        observation: usize,
        step: Option<usize>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size {size} exceeds the cap {cap}")]
    SizeOverflow { size: usize, cap: usize },
    #[error("linear solve failed (condition number estimate {condition:e})")]
    SolveFailure { condition: f64 },
    #[error("search space of {size} candidates exceeds the cap {cap}")]
    SearchSpaceTooLarge { size: u128, cap: u128 },
    #[error("action {action} is in the support at one (y,z) but not at another")]
    SupportMismatch { action: usize },
    #[error("entry {column} is reachable from one source state but not from another")]
    NotErgodic { column: usize },
    #[error("history has zero probability from every hidden state at step {step}")]
    DegenerateHistory { step: usize },
    #[error("density ratio is unbounded at joint index {index}")]
    UnboundedRatio { index: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
