use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("non-positive price at line {line}")]
    NonPositivePrice { line: u64 },

    #[error("duplicate observation for {symbol} on {date} at line {line}")]
    DuplicateObservation {
        symbol: String,
        date: NaiveDate,
        line: u64,
    },

    #[error("price file contains no observations")]
    EmptyFile,

    #[error("invalid date range: start {start} must precede end {end}")]
    InvalidDateRange { start: NaiveDate, end: NaiveDate },

    #[error("no Monday between {start} and {end}")]
    NoRebalanceDates { start: NaiveDate, end: NaiveDate },

    #[error("no eligible asset on {date}")]
    EmptyUniverse { date: NaiveDate },

    #[error("invalid window policy: {0}")]
    InvalidPolicy(String),

    #[error("{symbol} is not eligible on {date}: {reason}")]
    NotEligible {
        symbol: String,
        date: NaiveDate,
        reason: String,
    },

    #[error("unknown symbol {0}")]
    UnknownSymbol(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("signature level mismatch: {left} vs {right}")]
    LevelMismatch { left: usize, right: usize },

    #[error("k = {k} exceeds the number of points ({points})")]
    TooFewPoints { k: usize, points: usize },

    #[error("need at least {required} return rows, got {actual}")]
    TooFewReturns { required: usize, actual: usize },

    #[error("asset {symbol} has zero volatility")]
    DegenerateAsset { symbol: String },

    #[error("optimizer did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("rebalance infeasible: fee {fee} exceeds portfolio value {value}")]
    InfeasibleRebalance { fee: f64, value: f64 },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from user input validation rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidDateRange { .. }
                | Error::InvalidPolicy(_)
                | Error::NoRebalanceDates { .. }
        )
    }
}
