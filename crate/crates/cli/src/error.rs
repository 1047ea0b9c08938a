/// Failure of one CLI invocation, mapped onto an exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] caudg_core::Error),
}

impl CliError {
    /// 2 for bad input or usage, 3 when training blew up numerically.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 3,
            _ => 2,
        }
    }
}
