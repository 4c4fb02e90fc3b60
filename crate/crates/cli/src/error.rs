use artqa_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Core(_) => 1,
        }
    }

    /// Stable machine code, when one applies.
    pub fn code(&self) -> Option<&'static str> {
        match self {
            CliError::Core(Error::ModelNotLoaded(_)) => Some("MODEL_NOT_LOADED"),
            _ => None,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
