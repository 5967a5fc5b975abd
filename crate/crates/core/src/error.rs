use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("unsupported PNG format: {0}")]
    UnsupportedFormat(String),

    #[error("PNG codec error: {0}")]
    Png(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(
        "isolated hole: component containing pixel (row {row}, col {col}) has no context boundary"
    )]
    IsolatedHole { row: usize, col: usize },

    #[error("mask has no context pixels")]
    EmptyContext,

    #[error("empty hole region")]
    EmptyHole,

    #[error("invalid network: {0}")]
    Network(String),

    #[error("no eligible context patch for patch size {patch_size}")]
    NoContextPatch { patch_size: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("step size too large: energy {energy} exceeded 10x initial energy {initial}")]
    Diverged { energy: f64, initial: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("coverage {target} unreachable within {iterations} stamps")]
    CoverageUnreachable { target: f64, iterations: usize },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
