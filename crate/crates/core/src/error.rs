use std::path::PathBuf;

use thiserror::Error;

use crate::fingerprint::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("schema error at {location}: {reason}")]
    Schema { location: String, reason: String },

    #[error("dataset failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("data error in {sample}: {reason}")]
    Data { sample: String, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn summarize(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    let mut out = shown.join("; ");
    if violations.len() > 5 {
        out.push_str(&format!("; ... and {} more", violations.len() - 5));
    }
    out
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn parameter(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn data(sample: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            sample: sample.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parameter { .. } | Error::Pairing(_) => 2,
            Error::Numeric(_) => 4,
            Error::Schema { .. }
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::Data { .. }
            | Error::Io { .. } => 3,
        }
    }
}
