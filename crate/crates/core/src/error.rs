use std::path::PathBuf;

use thiserror::Error;

fn shape(s: &(usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {} vs {}", shape(left), shape(right))]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("ragged rows")]
    Ragged,
    #[error("least squares needs rows >= cols, got {rows}x{cols}")]
    Underdetermined { rows: usize, cols: usize },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: rating {value} outside [1, 5]")]
    RatingOutOfRange { path: PathBuf, line: usize, value: f64 },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown activation `{0}` (expected tanh, relu or sigmoid)")]
    UnknownActivation(String),
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{kind} index {index} out of range (size {size})")]
    OutOfRange { kind: &'static str, index: usize, size: usize },
    #[error("cold start: empty history and no fallback items")]
    ColdStart,
    #[error("degenerate linear-ratio normalization in head {head}: score sum {sum:e}")]
    DegenerateNormalization { head: usize, sum: f64 },
    #[error("attention head {0} has an empty key sample")]
    EmptyKeySample(usize),
    #[error("backbone mismatch: {0}")]
    BackboneMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("every user has zero ideal DCG")]
    AllUsersExcluded,
    #[error("cohort `{0}` requires a relation model")]
    NeedsRelationModel(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("unreadable checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("expected a `{expected}` checkpoint, found `{found}`")]
    Kind { expected: &'static str, found: String },
    #[error("checkpoint was written for a different pretraining configuration (hash {found}, live config {expected})")]
    ConfigHash { found: String, expected: String },
    #[error("relation checkpoint belongs to factors with checksum {found:016x}, loaded factors have {expected:016x}")]
    FactorChecksum { found: u64, expected: u64 },
    #[error("tensor `{name}` is inconsistent: {message}")]
    Tensor { name: String, message: String },
}

/// Crate-level error for operations that span several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
