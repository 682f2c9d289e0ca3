use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] diffcoder_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {what}: {path}")]
    Missing { what: &'static str, path: PathBuf },
    #[error("{path}: malformed {what}: {msg}")]
    Format { what: &'static str, path: PathBuf, msg: String },
    #[error("{path}: unknown format version `{found}`, expected `{expected}`")]
    Version { path: PathBuf, found: String, expected: &'static str },
    #[error("{path}: expected {expected} bytes, found {found}")]
    ByteCount { path: PathBuf, expected: u64, found: u64 },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{failed} of {total} matrix cells failed")]
    CellsFailed { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }
}
