use std::io;
use std::path::PathBuf;

/// Failures of the file formats and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Wrong magic or unsupported version.
    #[error("format error: {0}")]
    Format(String),
    /// Header and payload disagree, or the payload holds unusable values.
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] halfv_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 3 for I/O failures, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
