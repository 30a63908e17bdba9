use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding dim {dim} is not divisible by {heads} heads")]
    HeadDivisibility { dim: usize, heads: usize },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Empty(String),

    #[error("schema error in {path}: {field}: {message}")]
    Schema {
        path: String,
        field: String,
        message: String,
    },

    #[error("prerequisite missing: {0}")]
    Prerequisite(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("unknown backbone provider `{0}`")]
    UnknownProvider(String),

    #[error("config hash mismatch: artifact has {artifact}, config has {config}")]
    ConfigMismatch { artifact: String, config: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl AsRef<std::path::Path>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.as_ref().display().to_string(),
            field: field.into(),
            message: message.into(),
        }
    }
}
