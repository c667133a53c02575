use thiserror::Error;

/// CLI-level errors carry their process exit code: 2 for input/config
/// problems, 3 for numeric failures, 4 for partially failed sweeps.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("sweep finished with {failed} failed cell(s) out of {total}")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::PartialSweep { .. } => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl From<ccg_core::CcgError> for CliError {
    fn from(e: ccg_core::CcgError) -> Self {
        match e {
            ccg_core::CcgError::Numeric(msg) => CliError::Numeric(msg),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
