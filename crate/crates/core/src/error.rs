use std::path::PathBuf;

use dgir_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgirError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("config error at `{key}`: {detail}")]
    Config { key: String, detail: String },
}

pub type Result<T> = std::result::Result<T, DgirError>;

impl DgirError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DgirError::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        DgirError::Corrupt { path: path.into(), detail: detail.into() }
    }
}
