use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    MissingFile(PathBuf),
    Config(String),
    Numeric(String),
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::MissingFile(_) => 2,
            CliError::Config(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::MissingFile(p) => write!(f, "missing file: {}", p.display()),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<hmmrnn::Error> for CliError {
    fn from(e: hmmrnn::Error) -> Self {
        use hmmrnn::Error as E;
        match e {
            E::Config(_) | E::ConfigDrift { .. } | E::Parameter(_) | E::Spec(_) => CliError::Config(e.to_string()),
            E::Numeric(_) | E::NoConvergence { .. } | E::Pole => CliError::Numeric(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
