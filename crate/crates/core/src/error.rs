use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the model, corpus or training code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("training error in parameter {param}: {reason}")]
    Training { param: String, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
