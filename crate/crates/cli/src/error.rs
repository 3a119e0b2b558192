use roughfk_core::Error as CoreError;

/// Failures of a scenario run, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    UnknownPreset(String),
    /// The configuration violates an invariant at load time.
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite value in {stage}: path {path}, step {step}")]
    NonFinite { stage: String, path: usize, step: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownPreset(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::NonFinite { .. } => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }

    /// Errors raised while validating a configuration.
    pub fn at_load(e: CoreError) -> Self {
        match e {
            CoreError::UnknownPreset { .. } => CliError::UnknownPreset(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }

    /// Errors raised while computing `stage`.
    pub fn in_stage(stage: &str, e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { path, step } => CliError::NonFinite { stage: stage.to_string(), path, step },
            CoreError::UnknownPreset { .. } => CliError::UnknownPreset(e.to_string()),
            other => CliError::Other(format!("{stage}: {other}")),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
