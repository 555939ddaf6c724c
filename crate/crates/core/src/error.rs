use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Data is present but does not support the requested computation
    /// (too few rows, missing covariates, zero variance).
    #[error("data error: {0}")]
    Data(String),

    /// Estimation cannot proceed (e.g. too few exceedances).
    #[error("estimation infeasible: {0}")]
    Infeasible(String),

    /// A scenario produced parameters outside the model's support.
    #[error("scenario infeasible: {0}")]
    Scenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for input and validation problems, 3 for
    /// numerical or estimation failures, 4 for infeasible scenarios.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Infeasible(_) => 3,
            Error::Scenario(_) => 4,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }
}
