use std::path::PathBuf;

use cssbo_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Process exit status: 2 configuration, 3 invalid code, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::InvalidCode(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Parse(_) => 2,
                CoreError::InconsistentCode(_) => 3,
                _ => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
