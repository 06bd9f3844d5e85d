use sparse_bayes::SblError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<SblError> for CliError {
    fn from(e: SblError) -> Self {
        let msg = e.to_string();
        match e {
            SblError::InvalidInput(_) => CliError::Usage(msg),
            SblError::Degenerate(_) | SblError::CholeskyFailed(_) => CliError::Numerical(msg),
            SblError::NonFinite(what) if what.contains("log marginal") => CliError::Numerical(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("model file: {e}"))
    }
}
