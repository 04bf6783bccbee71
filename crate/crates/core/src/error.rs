//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("label {label} out of range 1..={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("duplicate sample id {0}")]
    DuplicateSampleId(usize),

    #[error("need at least {need} samples, got {have} ({context})")]
    InsufficientSamples {
        have: usize,
        need: usize,
        context: &'static str,
    },

    #[error("projection dimension is 0 (single subclass); skip the projection step")]
    DegenerateProjection,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
