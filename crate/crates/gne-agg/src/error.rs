use thiserror::Error;

/// Failure classes of the harness, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("instances differ between configurations: {0}")]
    InstanceMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(gne_core::Error),
    #[error("verification failed: {0}")]
    Violations(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::InstanceMismatch(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Violations(_) => 3,
        }
    }
}

impl From<gne_core::Error> for CliError {
    fn from(e: gne_core::Error) -> Self {
        use gne_core::Error as E;
        match e {
            E::InvalidParams(_)
            | E::InvalidGamma(_)
            | E::InfeasibleInstance(_)
            | E::DimensionMismatch { .. }
            | E::InvalidBox { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;
