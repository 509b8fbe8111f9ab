use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate record for station {station} on {date} (lines {first_line} and {second_line})")]
    Conflict {
        station: String,
        date: String,
        first_line: u64,
        second_line: u64,
    },

    #[error("input contains no records")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no scored observations")]
    EmptyEvaluation,

    #[error("crossing interval at index {index}: lower {lower} > upper {upper}")]
    InvalidInterval { index: usize, lower: f64, upper: f64 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(a: &[usize], b: &[usize], op: &str) -> Self {
        Error::Shape(format!("{op}: {a:?} vs {b:?}"))
    }
}
