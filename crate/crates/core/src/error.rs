use thiserror::Error;

/// Errors raised by the analytic model, the optimizer and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid session plan: {0}")]
    InvalidPlan(String),
    #[error("count {k} exceeds the number of trials {trials}")]
    CountOutOfRange { k: u64, trials: u64 },
    #[error("expected {expected} purification success probabilities, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("purification heralds success with probability zero")]
    DegeneratePurification,
    #[error("probability vector is not normalizable: {0:?}")]
    NotNormalizable([f64; 4]),
}

pub type Result<T> = std::result::Result<T, ModelError>;
