use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DonnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DonnError {
    /// Shapes or grids of two operands disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller asked for something unsupported or degenerate.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value appeared while evaluating a layer.
    #[error("non-finite value in channel {channel} layer {layer}: {what}")]
    Numeric {
        channel: usize,
        layer: usize,
        what: String,
    },

    /// Dataset or manifest failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A checkpoint or manifest could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl DonnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DonnError::Io {
            path: path.into(),
            source,
        }
    }
}
