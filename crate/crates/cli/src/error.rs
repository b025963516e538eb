//! Exit-code classification.

use std::fmt;

use editrefiner_core::Error as CoreError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input records. Exit code 2.
    Validation(anyhow::Error),
    /// Anything that went wrong while doing the work. Exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(msg: impl fmt::Display) -> Self {
        CliError::Validation(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError::Runtime(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "{e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::InvalidInput(_)
            | CoreError::Parse(_)
            | CoreError::Validation(_) => CliError::Validation(e.into()),
            CoreError::UndefinedMetric(_) | CoreError::Codec(_) | CoreError::Io { .. } => {
                CliError::Runtime(e.into())
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
