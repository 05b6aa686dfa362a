use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the stage that raises them; [`Error::is_user_error`]
/// separates bad input or configuration from internal faults, which the CLI
/// maps onto exit codes 2 and 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("cannot preprocess frame: {0}")]
    Preprocess(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("clip {} has no decodable frames", .0.display())]
    EmptyClip(PathBuf),

    #[error("corpus layout error for class {class:?}: {message}")]
    CorpusLayout { class: String, message: String },

    #[error("pretrained weights unavailable: {0}")]
    WeightsUnavailable(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("training data error: {0}")]
    TrainData(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("frame index {index} is outside clip with {frame_count} frames")]
    Range { index: usize, frame_count: usize },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("cannot encode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn decode(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Error::Decode {
            path: path.as_ref().to_path_buf(),
            message: message.to_string(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    /// True when the failure stems from the caller's input, files or
    /// configuration rather than from a fault inside the pipeline.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => matches!(
                source.kind(),
                io::ErrorKind::NotFound
                    | io::ErrorKind::PermissionDenied
                    | io::ErrorKind::AlreadyExists
                    | io::ErrorKind::InvalidInput
            ),
            Error::Image { .. } | Error::Json(_) | Error::Shape { .. } => false,
            _ => true,
        }
    }
}
