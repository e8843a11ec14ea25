use loga_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown assembling strategy `{0}`")]
    UnknownStrategy(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
