use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    /// A condition or acceptance check did not pass.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] silentwave::Error),
}

impl CliError {
    /// 1 usage/config, 2 condition or acceptance failure, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Failed(_) => 2,
            CliError::Core(e) => e.exit_class() as u8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
