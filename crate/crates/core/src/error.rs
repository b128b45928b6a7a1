use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/layer shape contract violations surfaced by bad inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Bad or missing configuration (CLI usage class).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents (images, manifests, checkpoints).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Dataset-level problems: missing counterparts, id mismatches.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values, gradient-check breaches, diverged training.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit code contract: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_) | Error::Format { .. } | Error::Io { .. } | Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
