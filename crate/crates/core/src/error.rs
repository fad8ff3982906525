use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("trace does not match model: {0}")]
    Trace(String),
    #[error("model is frozen; parameter updates are disabled")]
    Frozen,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("partition error: {0}")]
    Partition(String),
    #[error("selector error: {0}")]
    Selector(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("report error: {0}")]
    Report(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}
