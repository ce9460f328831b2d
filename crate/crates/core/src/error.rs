use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("series shorter than segment length (T = {len}, P = {segment_len})")]
    SeriesTooShort { len: usize, segment_len: usize },
    #[error("season map undefined for non-seasonal disease `{0}`")]
    NonSeasonal(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in encoder layer {layer} ({stage})")]
    NonFinite { layer: usize, stage: &'static str },
    #[error("non-finite loss in task {task} on dataset `{dataset}` at epoch {epoch}")]
    NonFiniteLoss {
        task: String,
        dataset: String,
        epoch: usize,
    },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("missing results: {0:?}")]
    MissingResults(Vec<PathBuf>),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
