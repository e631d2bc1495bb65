use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on a value that is not tracked by the tape")]
    Detached,
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        msg: msg.into(),
    }
}

pub(crate) fn shape_mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
