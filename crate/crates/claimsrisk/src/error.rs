use std::path::Path;

/// Errors surfaced by the command-line pipeline, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, bad configuration values, or a request the model cannot serve.
    #[error("{0}")]
    Usage(String),
    /// Missing, malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        AppError::Data(format!("{}: {e}", path.display()))
    }

    pub fn json(path: &Path, e: serde_json::Error) -> Self {
        AppError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<claimsrisk_core::Error> for AppError {
    fn from(e: claimsrisk_core::Error) -> Self {
        use claimsrisk_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::UnsupportedModel(_) | E::Infeasible(_) => AppError::Usage(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Data(e.to_string())
    }
}
