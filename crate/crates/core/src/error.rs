use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("eigenvalue iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("chain structure: {0}")]
    Structure(String),
    #[error("undefined observation row {0}: symbol has zero stationary probability")]
    UndefinedRow(usize),
    #[error("missing rollout state: {0}")]
    State(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("config drift: header digest {found} does not match config digest {expected}")]
    ConfigDrift { expected: String, found: String },
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("intervention spec: {0}")]
    Spec(String),
    #[error("pole: mobius map is undefined at lambda = -1")]
    Pole,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
