use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class index out of range: {value} >= {num_classes} at (row {row}, col {col})")]
    ClassOutOfRange {
        value: u8,
        num_classes: u8,
        row: usize,
        col: usize,
    },

    #[error("probability {value} out of [0,1] at (row {row}, col {col}, class {class})")]
    ProbabilityOutOfRange {
        value: f32,
        row: usize,
        col: usize,
        class: usize,
    },

    #[error("row sum {sum} exceeds tolerance at (row {row}, col {col})")]
    NotNormalized { sum: f32, row: usize, col: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("no source instances")]
    NoSourceInstances,

    #[error("incomplete coverage at pixel (row {row}, col {col})")]
    IncompleteCoverage { row: usize, col: usize },

    #[error("empty metric: no class present in truth or prediction")]
    EmptyMetric,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("expected {expected}, found {found}")]
    Format { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: png decode: {message}")]
    PngDecode { path: PathBuf, message: String },

    #[error("{path}: png encode: {message}")]
    PngEncode { path: PathBuf, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
