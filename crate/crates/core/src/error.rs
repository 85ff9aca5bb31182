use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by the harness to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("horizon {eta} outside [{eta_min}, {eta_max}]")]
    HorizonOutOfRange { eta: i32, eta_min: i32, eta_max: i32 },

    #[error("window ending at t={end_t} needs {window} rows (series has {len})")]
    WindowOutOfRange { end_t: usize, window: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dataset has a single class ({0}); both classes are required")]
    SingleClass(u8),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("decision records do not cover the series: {0}")]
    Coverage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::HorizonOutOfRange { .. }
            | Error::WindowOutOfRange { .. }
            | Error::InvalidConfig(_) => ErrorKind::Validation,
            Error::InsufficientData(_)
            | Error::SingleClass(_)
            | Error::NonFinite(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::Coverage(_) | Error::Invariant(_) => ErrorKind::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
