use std::fmt;

/// Errors produced by the ingest, factorization, rank selection and pattern stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("no data rows: {0}")]
    EmptyInput(String),
    #[error("records span more than one period: {0:?}")]
    MixedPeriods(Vec<String>),
    #[error("rank {rank} outside valid range 1..={max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input has a negative or non-finite entry at ({row}, {col})")]
    NonNegativityViolation { row: usize, col: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),
    #[error("hour bins differ between pattern sets: {a:?} vs {b:?}")]
    HourBinMismatch { a: Vec<u32>, b: Vec<u32> },
    #[error("grand total of the reference period is zero")]
    ZeroTotal,
    #[error("no rank in the scan produced a usable result")]
    NoValidRank,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed table: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidRank { .. } | Error::InvalidConfig(_) => ErrorKind::Config,
            Error::Numerical(_) | Error::NoValidRank | Error::DegenerateClustering(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
