use thiserror::Error;

/// Crate-wide error type. The variant name doubles as the machine-readable
/// code printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("VALIDATION: {0}")]
    Validation(String),
    #[error("COMBINE: {0}")]
    Combine(String),
    #[error("FEATURE: {0}")]
    Feature(String),
    #[error("LEARN: {0}")]
    Learn(String),
    #[error("EVAL: {0}")]
    Eval(String),
    #[error("PARSE: {0}")]
    Parse(String),
    #[error("IO: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable code for stderr reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "VALIDATION",
            Error::Combine(_) => "COMBINE",
            Error::Feature(_) => "FEATURE",
            Error::Learn(_) => "LEARN",
            Error::Eval(_) => "EVAL",
            Error::Parse(_) => "PARSE",
            Error::Io(_) => "IO",
        }
    }

    /// Process exit code per the CLI contract: validation errors exit 2,
    /// everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
