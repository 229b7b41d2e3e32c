use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("batchnorm `{0}` used in infer mode before any training batch")]
    UninitializedStats(String),

    #[error("non-finite {component} loss at step {step}")]
    NonFinite { step: u64, component: &'static str },

    #[error("checkpoint corruption: {0}")]
    Corruption(String),

    #[error("search space error: {0}")]
    Space(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<S: Into<String>>(msg: S) -> Error {
    Error::Shape(msg.into())
}
