use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("input has {got} entries, network expects {expected}")]
    InputDim { expected: usize, got: usize },

    #[error("non-finite gradient in parameter {index} ({value}) at optimizer step {step}")]
    NonFiniteGradient { index: usize, value: f64, step: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] coalition_core::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
