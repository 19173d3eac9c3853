use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}: {detail}")]
    NonFinite { layer: usize, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } | Error::Numeric(_) => "numeric",
            Error::Input(_) | Error::OutOfRange { .. } => "input",
            Error::Degenerate(_) => "degenerate",
            Error::Format(_) | Error::Json { .. } => "format",
            Error::Sampling(_) => "sampling",
            Error::MissingInput(_) => "missing-input",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for the CLI; distinct per failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::MissingInput(_) => 3,
            Error::Format(_) | Error::Json { .. } => 4,
            Error::NonFinite { .. } | Error::Numeric(_) => 5,
            Error::Io { .. } => 6,
            Error::Sampling(_) => 7,
            Error::Input(_) | Error::OutOfRange { .. } | Error::Degenerate(_) => 8,
        }
    }
}
