use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),

    #[error("empty mask not applicable")]
    EmptyMask,

    #[error("no candidate masks")]
    NoCandidates,

    #[error("AUROC undefined: {0}")]
    AurocUndefined(String),

    #[error("FG-ARI undefined: ground truth has no foreground pixels")]
    FgAriUndefined,

    #[error("strategy {strategy} requires {missing}")]
    MissingAuxiliary {
        strategy: &'static str,
        missing: &'static str,
    },

    #[error("missing group id for sample {0}")]
    MissingGroup(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("embedding not found for key {0:?}")]
    EmbeddingNotFound(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Attach a sample id to an error, unless it already carries one.
    pub fn for_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            other => Error::Sample {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }
}
