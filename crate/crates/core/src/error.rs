use thiserror::Error;

/// Errors surfaced by every layer of the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("stale or mismatched forward cache: {0}")]
    Consistency(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error at row {row}, column {col}: {msg}")]
    Format { row: usize, col: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("infeasible partition: {0}")]
    Feasibility(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            msg: err.to_string(),
        }
    }
}
