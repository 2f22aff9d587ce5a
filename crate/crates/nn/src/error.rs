use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mask must contain at least one cell")]
    EmptyMask,
    #[error("divergence: non-finite gradient in parameter `{0}`")]
    Divergence(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("no parameter named `{0}`")]
    UnknownParam(String),
}

impl NnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        NnError::Shape(msg.into())
    }
}
