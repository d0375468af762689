use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
///
/// Variants are grouped so the command-line front end can map them onto
/// distinct exit statuses (usage, data, numerical).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("conformability error: {0}")]
    Conformability(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidBasis(_) | Error::InvalidDimension(_) | Error::Config(_) => {
                ErrorKind::Usage
            }
            Error::DegenerateConstraint(_) | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Input(_)
            | Error::Conformability(_)
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
