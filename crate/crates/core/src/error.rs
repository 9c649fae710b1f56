use alloc::string::String;

/// Errors raised by the core pipeline.
///
/// Variants carry enough context to name the offending input; the std
/// companion crate maps them onto its own error type and exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible generator configuration: {0}")]
    Infeasible(String),
    #[error("conflicting demographics for patient {0}")]
    ConflictingDemographics(String),
    #[error("claim references patient {0} with no demographics record")]
    MissingDemographics(String),
    #[error("observation window: {0}")]
    Window(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("single-class data: {0}")]
    SingleClass(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported model kind: {0}")]
    UnsupportedModel(String),
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = core::result::Result<T, Error>;
