use std::path::PathBuf;

use numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(#[from] NumError),
    #[error("invalid UTF-8 input: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate embedding: {0}")]
    Degenerate(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
    #[error("checkpoint {}: bad magic bytes", .path.display())]
    BadMagic { path: PathBuf },
    #[error("checkpoint {}: format version {found}, expected {expected}", .path.display())]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("checkpoint {}: truncated ({detail})", .path.display())]
    Truncated { path: PathBuf, detail: String },
    #[error("checkpoint stage tag {found:?}, expected {expected:?}")]
    StageMismatch { found: String, expected: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Encoding(_) | Error::Format(_) => 3,
            Error::Numeric(_) | Error::Degenerate(_) => 4,
            _ => 1,
        }
    }
}

pub trait IoContext<T> {
    fn ctx(self, context: impl Into<String>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn ctx(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: context.into(),
            source,
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
