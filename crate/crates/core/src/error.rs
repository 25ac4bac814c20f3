use alloc::string::String;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("capacity exceeded: {gts} ground truths but only {queries} queries")]
    Capacity { gts: usize, queries: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("gradient verification failed: {0}")]
    Verification(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
}

pub type Result<T> = core::result::Result<T, Error>;
