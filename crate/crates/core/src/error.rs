use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::AuxFactor;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),

    #[error("degenerate signal: variance is zero")]
    DegenerateSignal,

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("{factor} value {value} lies outside every label interval")]
    OutOfMappingRange { factor: AuxFactor, value: f64 },

    #[error("recording {0} is not listed in the split manifest")]
    UnmappedRecording(u32),

    #[error("failed to ingest recording {id}: {reason}")]
    Ingest { id: u32, reason: String },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
