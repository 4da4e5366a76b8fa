use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto a stable exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("numerical failure: {message} (estimate {estimate:e}, refined {refined:e})")]
    Numerical {
        message: String,
        estimate: f64,
        refined: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("iteration did not contract: q = {q_hat:.4} at lambda = {lambda} after {iterations} iterations")]
    NonConvergence {
        q_hat: f64,
        lambda: f64,
        iterations: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assumption(_) => 2,
            Error::NonConvergence { .. } => 3,
            Error::Config(_) | Error::Domain(_) | Error::Serde(_) => 4,
            Error::Numerical { .. } | Error::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
