use alloc::string::String;

/// Errors produced anywhere in the interpretation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capacity exceeded: output dimension {dim} is above the enumeration bound {bound}")]
    Capacity { dim: usize, bound: usize },
    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },
    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_mismatch(what: &str, expected: usize, got: usize) -> Error {
    Error::InvalidInput(alloc::format!("{what}: expected length {expected}, got {got}"))
}
