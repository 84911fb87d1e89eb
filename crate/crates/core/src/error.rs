use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("input is empty")]
    EmptyInput,

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: column `{column}` is not a number: {raw:?}")]
    NonNumeric {
        line: u64,
        column: String,
        raw: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("ragged panel: auction {auction} has {found} bidders, expected {expected}")]
    RaggedPanel {
        auction: String,
        expected: usize,
        found: usize,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("insufficient sample: need at least {needed}, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("bids must be positive for the log regression (got {0})")]
    NonPositiveBid(f64),

    #[error("design matrix is rank deficient ({rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Rough classification used by front ends to pick an exit status.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::NonNumeric { .. }
                | Error::MissingColumn(_)
                | Error::RaggedPanel { .. }
                | Error::DegenerateSample(_)
                | Error::InsufficientSample { .. }
                | Error::NonPositiveBid(_)
                | Error::RankDeficient { .. }
        )
    }
}
