use thiserror::Error;

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("file holds no rows")]
    Empty,
    #[error("unsupported schema_version {0}")]
    Schema(u64),
    #[error("tensor `{name}` has shape {shape:?} but {actual} values")]
    Shape { name: String, shape: Vec<usize>, actual: usize },
    #[error("checkpoint is inconsistent: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] lrmf_core::Error),
}

impl FormatError {
    pub(crate) fn parse(line: u64, msg: impl Into<String>) -> Self {
        FormatError::Parse { line, msg: msg.into() }
    }
}
