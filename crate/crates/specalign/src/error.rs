use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: &'static str,
    },
    #[error("{}: truncated: need {expected} bytes, found {found}", path.display())]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{}: {trailing} unexpected bytes after the payload", path.display())]
    TrailingBytes { path: PathBuf, trailing: u64 },
    #[error("{}: non-finite value in row {row}", path.display())]
    NonFinite { path: PathBuf, row: usize },
    #[error("{}: {detail}", path.display())]
    BadHeader { path: PathBuf, detail: String },
    #[error("{}:{line}: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{count} key values of {key:?} span several parts")]
    Leakage { key: String, count: usize },
    #[error(transparent)]
    Core(#[from] specalign_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 configuration or validation, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Leakage { .. } => 1,
            Error::Core(e) if e.is_config() => 1,
            Error::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}
