use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures surfaced by the harness, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input {path}: {detail}")]
    MissingInput { path: PathBuf, detail: String },
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(aum_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(aum_core::Error::Config(_)) => 2,
            CliError::Core(aum_core::Error::NonFinite { .. }) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput {
                path,
                detail: source.to_string(),
            }
        } else {
            CliError::Io { path, source }
        }
    }
}

impl From<aum_core::Error> for CliError {
    fn from(e: aum_core::Error) -> Self {
        match e {
            aum_core::Error::Config(msg) => CliError::Config(msg),
            aum_core::Error::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
