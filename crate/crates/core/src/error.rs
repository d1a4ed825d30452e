use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, got {got:?}, expected {expected}")]
    ShapeMismatch { op: &'static str, got: Vec<Vec<usize>>, expected: String },
    #[error("unknown operator kind `{0}`")]
    UnknownOp(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
