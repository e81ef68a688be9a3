use std::path::PathBuf;

/// Errors produced by the attribution toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is outside its documented domain.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller violated an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric result left the finite range (NaN or infinity).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A painting appears on both sides of a train/validation split.
    #[error("painting leakage between splits: {0}")]
    Leakage(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A file decoded but its contents are not supported.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Input data failed a validation rule.
    #[error("validation error: {0}")]
    Validation(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
