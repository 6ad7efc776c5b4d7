use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} is {found}, expected {expected}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not real-diagonalizable: {0}")]
    NotDiagonalizable(String),

    #[error("noise covariance is singular (smallest eigenvalue {min_eigenvalue:.3e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("threshold outside truncation region: {0}")]
    ThresholdOutsideRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
