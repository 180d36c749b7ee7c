use thiserror::Error;

/// Failures surfaced to the shell, each with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, configuration or model file.
    #[error("{0}")]
    Input(String),

    /// Data the models cannot be fitted to, or a numerical breakdown.
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl From<tailweight::Error> for CliError {
    fn from(e: tailweight::Error) -> Self {
        let msg = e.to_string();
        let mut inner = &e;
        while let tailweight::Error::Group { source, .. } = inner {
            inner = source;
        }
        match inner {
            tailweight::Error::InvalidInput(_) | tailweight::Error::Json(_) => CliError::Input(msg),
            _ => CliError::Degenerate(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
