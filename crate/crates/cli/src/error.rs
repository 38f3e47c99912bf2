use std::path::PathBuf;

use idcf_core::error::{CheckpointError, ConfigError, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] idcf_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read config {path}: {source}")]
    ConfigFile { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    MissingCheckpoint { path: PathBuf, message: &'static str },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0} gradient check(s) exceeded the tolerance")]
    GradCheckFailed(usize),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 config, 3 checkpoint, 4 cold start, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use idcf_core::Error as E;
        match self {
            CliError::Core(E::Config(_)) | CliError::ConfigFile { .. } | CliError::Usage(_) => 2,
            CliError::Core(E::Checkpoint(_) | E::Model(ModelError::BackboneMismatch(_))) | CliError::MissingCheckpoint { .. } => 3,
            CliError::Core(E::Model(ModelError::ColdStart)) => 4,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
