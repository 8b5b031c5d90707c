use cgfr_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = CgfrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CgfrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config: {0}")]
    Config(String),

    #[error("input: {0}")]
    Input(String),

    #[error("load: {0}")]
    Load(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CgfrError {
    pub fn config(msg: impl Into<String>) -> Self {
        CgfrError::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CgfrError::Input(msg.into())
    }
}
