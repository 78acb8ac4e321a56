use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameters do not match the configuration: {0}")]
    ParamMismatch(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint fingerprint {found} is incompatible with {expected}")]
    Incompatible { expected: String, found: String },
    #[error(transparent)]
    Signal(#[from] silhouette_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
