use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("basis is numerically degenerate: |det T_E| = {det:e} is below the floor {floor:e}")]
    Degenerate { det: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("weight `{weight}` is not positive at {at:?} (value {value})")]
    Positivity { weight: String, at: Vec<f64>, value: f64 },

    #[error("numeric failure in {context}")]
    Numeric { context: String },

    #[error("sampled function is not finite at cell {index:?}")]
    Sampling { index: Vec<usize> },

    #[error("axis {axis}: evaluation needs coordinates [{needed_lo}, {needed_hi}] but the window is [{lo}, {hi}]")]
    Coverage {
        axis: usize,
        needed_lo: f64,
        needed_hi: f64,
        lo: f64,
        hi: f64,
    },

    #[error("axis {axis}: offset {offset} is not a whole number of cells of width {cell_width}")]
    Alignment {
        axis: usize,
        offset: f64,
        cell_width: f64,
    },

    #[error("invalid axis specification: {0}")]
    InvalidAxis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported echo structure: {0}")]
    UnsupportedEcho(String),

    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),

    #[error("precondition `{check}` failed: {detail}")]
    Precondition { check: String, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
