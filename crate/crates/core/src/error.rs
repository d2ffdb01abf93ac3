use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {value} at sample {sample}")]
    NonFinite { sample: usize, value: f64 },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix too large for exhaustive search: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
