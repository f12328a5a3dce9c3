use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axis} axis ({detail})")]
    Dim {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} elements but {got} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op}: normalized axis is empty")]
    EmptyAxis { op: &'static str },

    #[error("trilinear sampling on a grid with a zero extent {shape:?}")]
    EmptyGrid { shape: Vec<usize> },

    #[error("{op}: unsupported kernel {detail}")]
    UnsupportedKernel { op: &'static str, detail: String },

    #[error("{op}: invalid argument ({detail})")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward was already run on this tape; record a new tape first")]
    BackwardTwice,

    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{0}` is already registered")]
    DuplicateParameter(String),
}

pub(crate) fn dim_err(op: &'static str, axis: impl Into<String>, detail: impl Into<String>) -> TensorError {
    TensorError::Dim {
        op,
        axis: axis.into(),
        detail: detail.into(),
    }
}
