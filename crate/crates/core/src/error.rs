use std::path::PathBuf;

/// Errors produced by the quantization toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("diverged at iteration {iter} (last finite loss {last_finite_loss:?})")]
    Divergence {
        iter: u64,
        last_finite_loss: Option<f64>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
