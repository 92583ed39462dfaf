use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero variance")]
    ConstantColumn(usize),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid arguments: {0}")]
    InvalidArgs(String),

    #[error("index {index} out of range for {context} (size {size})")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        size: usize,
    },

    #[error("group `{0}` is empty")]
    EmptyGroup(String),

    #[error("column has zero norm")]
    ZeroColumn,

    #[error("every coefficient block has been excluded")]
    AllBlocksExcluded,

    #[error("residual sum of squares vanished for response {response}")]
    PerfectFit { response: usize },

    #[error("response {response} has {support} selected predictors but only {n} observations")]
    Overcapacity {
        response: usize,
        support: usize,
        n: usize,
    },

    #[error("no fitted coefficients to derive a threshold from")]
    NoEntries,

    #[error("cannot partition {total} columns into groups of sizes {sizes:?}")]
    InfeasiblePartition { total: usize, sizes: Vec<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
