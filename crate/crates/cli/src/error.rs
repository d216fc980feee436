use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid {field}: {message}")]
    Usage { field: String, message: String },
    #[error(transparent)]
    Core(#[from] eki::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage errors, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 1,
            _ => 2,
        }
    }
}
