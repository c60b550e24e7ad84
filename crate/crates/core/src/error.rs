use std::path::PathBuf;

/// Errors produced by the simulator and its components.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A system or run configuration violates a structural requirement
    /// (odd reflector count, non-power-of-two order, mismatched model, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An argument to an individual operation is out of its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {msg}")]
    Parse { what: &'static str, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
