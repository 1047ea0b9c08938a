use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requested but no forward pass was recorded for this node")]
    NoForward,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file or directory: {}", .0.display())]
    Missing(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::Missing(path);
        }
        Error::Io { path, source }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Divergence(_) | Error::NonFinite(_))
    }
}
