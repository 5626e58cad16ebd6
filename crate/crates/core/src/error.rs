use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Runtime,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "UsageError",
            Category::Data => "DataError",
            Category::Runtime => "RuntimeFailure",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate feature: norm {norm:e} below threshold {epsilon:e}")]
    DegenerateFeature { norm: f64, epsilon: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("identity label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("zero vector in row {row} (norm {norm:e})")]
    ZeroVector { row: usize, norm: f64 },

    #[error("manifest {path}: line {line}: {message}")]
    ManifestParse { path: PathBuf, line: usize, message: String },

    #[error("missing image: {0}")]
    MissingImage(PathBuf),

    #[error("image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("age {age} outside dataset range [{min}, {max}]")]
    OutOfRangeAge { age: f64, min: f64, max: f64 },

    #[error("ages must be strictly increasing")]
    NonIncreasingAges,

    #[error("invalid toy resolution {0} (expected 32 or 64)")]
    InvalidResolution(usize),

    #[error("non-finite loss term `{term}` at step {step}: {dump}")]
    NonFiniteLoss { term: String, step: u64, dump: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown configuration key `{key}`; valid keys: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<&'static str> },

    #[error("checkpoint write failed for {path}: {source}")]
    CheckpointWrite { path: PathBuf, source: std::io::Error },

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("verifier client failure: {0}")]
    ClientFailure(String),

    #[error("image is not a toy rendering: {0}")]
    NotToyImage(String),

    #[error("unknown verifier client `{name}`; registered: {}", known.join(", "))]
    UnknownClient { name: String, known: Vec<String> },

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn category(&self) -> Category {
        use Error::*;
        match self {
            InvalidConfig(_) | UnknownKey { .. } | UnknownClient { .. } => Category::Usage,
            ManifestParse { .. }
            | MissingImage(_)
            | ImageDecode { .. }
            | OutOfRangeAge { .. }
            | NonIncreasingAges
            | InvalidResolution(_)
            | InvalidLabel { .. }
            | EmptyTestSet
            | NotToyImage(_)
            | CheckpointFormat(_) => Category::Data,
            _ => Category::Runtime,
        }
    }
}
