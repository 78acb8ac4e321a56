use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at step {step}{}", snapshot.as_ref().map(|p| format!(" (snapshot: {})", p.display())).unwrap_or_default())]
    NonFinite {
        what: String,
        step: u64,
        snapshot: Option<PathBuf>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Model(#[from] silhouette_nn::Error),
    #[error(transparent)]
    Signal(#[from] silhouette_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
