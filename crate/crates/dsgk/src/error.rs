//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by geometry, statistics, loss, network, data, and harness code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot project: input norm {norm:e} is at or below {limit:e}")]
    ZeroNorm { norm: f64, limit: f64 },

    #[error("points are antipodal (dot product {dot}); tangent direction undefined")]
    Antipodal { dot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tangent base differs from the given point by {max_diff:e}")]
    BaseMismatch { max_diff: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),

    #[error("batch carries no labels")]
    MissingLabels,

    #[error("class {class} has {got} samples, need at least {needed}")]
    InsufficientClassSamples {
        class: usize,
        got: usize,
        needed: usize,
    },

    #[error("no class has enough samples in both batches")]
    NoValidClasses,

    #[error("probability row {row} sums to {sum}, expected 1")]
    RowNotNormalized { row: usize, sum: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid layer sizes: {0}")]
    InvalidSizes(String),

    #[error("training-mode forward needs at least 2 samples when normalization layers are active")]
    SingleSampleTrainingBatch,

    #[error("backward cache is stale: {0}")]
    StaleCache(String),

    #[error("schedule length {0} outside the supported range 1..=9")]
    TOutOfRange(usize),

    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    #[error("line {line} has {got} feature columns, expected {expected}")]
    InconsistentWidth {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("batch size {batch} exceeds the smaller domain size {smaller}")]
    BatchTooLarge { batch: usize, smaller: usize },

    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
