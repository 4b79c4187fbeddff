use thiserror::Error;

/// Errors produced by solvers, the trainer and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("forward integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("adaptive solver step size underflow at t = {t:.6e} (h = {h:.3e}); problem too stiff")]
    Stiffness { t: f64, h: f64 },

    #[error("adaptive solver exceeded {0} steps")]
    MaxSteps(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate optimizer state: {0}")]
    Degenerate(&'static str),

    #[error("no usable perturbation direction: {0}")]
    NoDirection(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("IDX parse error at byte {offset}: {message}")]
    IdxParse { offset: u64, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
