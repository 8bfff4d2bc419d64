use thiserror::Error;

/// Errors produced by the numerics core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),

    #[error("wavelength grids do not match ({expected} vs {found})")]
    GridMismatch { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sensitivity basis is rank deficient (Gram matrix is singular)")]
    SingularBasis,

    #[error("non-physical reradiation matrix: {0}")]
    NonPhysical(String),

    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("index ({row}, {col}) out of bounds for {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidParameter`].
    pub fn param(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
