//! Error types shared across the simulator.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The configuration document could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A parsed configuration value violates one of its constraints.
    #[error("invalid config: {field} = {value} violates: {constraint}")]
    ConfigInvalid {
        field: String,
        value: String,
        constraint: String,
    },

    /// A caller-side contract was broken (e.g. serviced > received).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(field: &str, value: impl ToString, constraint: &str) -> Self {
        Error::ConfigInvalid {
            field: field.to_string(),
            value: value.to_string(),
            constraint: constraint.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
