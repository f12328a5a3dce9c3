use std::path::PathBuf;

use ndtensor::TensorError;
use thiserror::Error;

pub type Result<T, E = MgirError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MgirError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid parameter `{name}`: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("malformed {kind} data at byte {offset}: {detail}")]
    Format {
        kind: &'static str,
        offset: usize,
        detail: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("request of {requested} voxels exceeds the budget of {limit}")]
    Budget { requested: usize, limit: usize },

    #[error("training aborted at step {step}: loss is {value}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("{0} is undefined for these inputs")]
    UndefinedMetric(&'static str),

    #[error("weights sum to {sum}, expected 1")]
    Normalization { sum: f64 },
}

impl MgirError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(vec![msg.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
