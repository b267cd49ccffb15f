use crate::tensor::Dims;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    Shape {
        op: &'static str,
        lhs: Dims,
        rhs: Dims,
    },

    #[error("invalid dims {0}: every axis must be at least 1 and match the data length")]
    BadDims(Dims),

    #[error("backward needs a scalar loss, got {0}")]
    NonScalarLoss(Dims),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("support set is empty")]
    EmptySupport,

    #[error("action `{action}`: need {required} windows, only {available} available")]
    InsufficientData {
        action: String,
        required: usize,
        available: usize,
    },

    #[error("non-finite {what} (epoch {epoch}, action `{action}`, value {value})")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        action: String,
        value: f64,
    },

    #[error("config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
