//! Rating tables, synthetic block-design data and fit artifacts.

mod output;
mod synth;
mod table;

pub use output::{
    write_atomic, write_fit, write_search, ASSIGNMENTS_FILE, BIC_TABLE_FILE, CLUSTER_MEANS_FILE,
    SUMMARY_FILE, TRACE_FILE,
};
pub use synth::{generate_bib, SyntheticSpec, TruthRecord};
pub use table::{parse_table, write_table, ParseOptions, RatingTable};

use thiserror::Error;

use crate::gaussian::GaussianError;
use crate::mixture::FitError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: consumer {id} has no observed ratings")]
    EmptyRow { line: u64, id: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: value {value} outside [{lo}, {hi}]")]
    OutOfScale {
        line: u64,
        column: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("table needs a header with at least one product column")]
    MissingHeader,
    #[error("table has no data rows")]
    NoRows,
    #[error("malformed input: {0}")]
    Csv(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<GaussianError> for DataError {
    fn from(e: GaussianError) -> Self {
        DataError::Fit(e.into())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::Io(io),
            other => DataError::Csv(format!("{other:?}")),
        }
    }
}

impl DataError {
    /// Errors caused by the content of an input table.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            DataError::NonNumeric { .. }
                | DataError::EmptyRow { .. }
                | DataError::Ragged { .. }
                | DataError::OutOfScale { .. }
                | DataError::MissingHeader
                | DataError::NoRows
                | DataError::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
