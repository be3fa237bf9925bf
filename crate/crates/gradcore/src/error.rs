use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("graph has no input named `{0}`")]
    UnknownInput(String),

    #[error("graph has no parameter named `{0}`")]
    UnknownParam(String),

    #[error("backward called before forward")]
    NoForward,

    #[error("output is not a scalar (shape {0:?})")]
    NonScalarOutput(Vec<usize>),

    #[error("invalid optimizer configuration: {0}")]
    Optimizer(String),

    #[error("weight file: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> GradError {
    GradError::Shape {
        op,
        detail: detail.into(),
    }
}
