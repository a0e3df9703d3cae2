use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("index ({row}, {col}) out of range for dimension {dimension}")]
    IndexOutOfRange { row: usize, col: usize, dimension: usize },

    #[error("point ({x:.6e}, {y:.6e}) lies outside the grid hull")]
    OutsideHull { x: f64, y: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("times are not strictly increasing at sample {0}")]
    NonMonotoneTimes(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("core operator entry ({0}, {1}) is not populated")]
    MissingEntry(usize, usize),

    #[error("transfer function bin {bin} on channel {channel} is unusable")]
    UnusableBin { channel: usize, bin: usize },

    #[error("the normal operator is zero (no samples and no regularization)")]
    ZeroOperator,

    #[error("shape `{0}` does not fit inside the grid")]
    ShapeOutOfBounds(String),

    #[error("external denoiser: {0}")]
    Denoiser(String),

    #[error("parse error in {context} at line {line}: {reason}")]
    Parse {
        context: String,
        line: usize,
        reason: String,
    },

    #[error("stage `{stage}`: {error}")]
    Stage { stage: &'static str, error: Box<Error> },

    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                error: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
