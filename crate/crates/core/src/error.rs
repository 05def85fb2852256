use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A record or parameter violates a type invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// Numeric input outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    /// Probe/gallery structure does not support the requested metric.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no positive: subject {0} has a single sample in the batch")]
    NoPositive(String),
    #[error("no negative: the batch holds a single subject")]
    NoNegative,
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("infeasible plan: need {needed} subjects, only {available} available")]
    Infeasible { needed: usize, available: usize },
    #[error("degenerate template for subject {0}: mean of normalized vectors is zero")]
    DegenerateTemplate(String),
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn protocol(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}
