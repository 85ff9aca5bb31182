use std::path::PathBuf;

use ecots_core::ErrorKind;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ecots_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("{0}")]
    Missing(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Data { path: path.into(), msg: msg.to_string() }
    }

    /// 1 for bad configuration, 2 for bad or missing data, 3 for broken invariants.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            },
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Data { .. } | CliError::Missing(_) => 2,
        }
    }
}
