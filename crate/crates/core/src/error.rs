use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between raw CSV input and a finished report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv read failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("required column {name:?} not found in header")]
    MissingColumn { name: String },

    #[error("line {line}: malformed row: {detail}")]
    MalformedRow { line: u64, detail: String },

    #[error("line {line}: cannot parse timestamp {value:?} (expected YYYY-MM-DD HH:MM:SS)")]
    BadTimestamp { line: u64, value: String },

    #[error("line {line}: cannot parse date {value:?} (expected YYYY-MM-DD)")]
    BadDate { line: u64, value: String },

    #[error("line {line}: column {column:?}: non-numeric value {value:?}")]
    NonNumericCell {
        line: u64,
        column: String,
        value: String,
    },

    #[error("line {line}: column {column:?}: value {value} outside [0, 100]")]
    PercentOutOfRange {
        line: u64,
        column: String,
        value: f64,
    },

    #[error("duplicate date {date} in weather input")]
    DuplicateDate { date: chrono::NaiveDate },

    #[error("nominal column {name:?} still present at join; exclude it first")]
    NominalColumnAtJoin { name: String },

    #[error("join produced no rows; check that trip and weather dates overlap")]
    EmptyJoin,

    #[error("column {name:?} is constant; correlation is undefined")]
    ConstantColumn { name: String },

    #[error("column {name:?} has zero variance; cannot standardize")]
    ZeroVariance { name: String },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("k = {k} exceeds the {distinct} distinct rows available")]
    TooFewDistinctRows { k: usize, distinct: usize },

    #[error("k must be at least {min}, got {k}")]
    BadK { k: usize, min: usize },

    #[error("cluster {index} is empty")]
    EmptyCluster { index: usize },

    #[error("all {attempts} restarts were discarded for empty clusters")]
    AllRestartsDiscarded { attempts: usize },

    #[error("k range {min}..{max} is invalid")]
    BadKRange { min: usize, max: usize },

    #[error("curve needs at least 3 consecutive k values, got {got}")]
    CurveTooShort { got: usize },

    #[error("within-cluster sum of squares is zero at k = {k}; log is undefined")]
    ZeroWss { k: usize },

    #[error("feature {name:?} has a degenerate bounding box; cannot draw reference data")]
    DegenerateBoundingBox { name: String },

    #[error("all points are identical; silhouette is undefined")]
    IdenticalPoints,

    #[error("assignments reference cluster {label} but k = {k}")]
    BadLabel { label: usize, k: usize },

    #[error("{context}: {detail}")]
    InvalidInput { context: String, detail: String },
}

impl Error {
    pub fn invalid_input(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvalidInput {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
