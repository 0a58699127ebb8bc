use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The input file is not a rectangular table.
    #[error("format error: {0}")]
    Format(String),

    /// A cell could not be read as a number. Row and column are 1-based and
    /// count data rows only (the header is not row 1).
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// A transform was applied outside its domain (for example a log of a
    /// non-positive value).
    #[error("domain error in series `{series}`: {msg}")]
    Domain { series: String, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The s-update numerator vanished, so no unit direction is defined.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("numerical rank deficiency: {0}")]
    RankDeficient(String),

    /// The reconstruction residual is zero and the BIC log term is undefined.
    #[error("zero residual: BIC is undefined")]
    ZeroResidual,

    #[error("estimation of column {column} failed: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("benchmark failed: {0}")]
    Benchmark(String),

    #[error("forecast at row {row} failed: {source}")]
    Forecast {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
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
