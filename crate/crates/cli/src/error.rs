use std::fmt;

use coxlin::error::Error;

/// Failure of a subcommand, classified by exit code:
/// 1 I/O or unreadable input, 2 model or fit failure (and bad usage),
/// 3 internal self-check, 4 experiment validity.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Model(String),
    SelfCheck(String),
    Validity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Model(_) => 2,
            CliError::SelfCheck(_) => 3,
            CliError::Validity(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Model(m) => write!(f, "model error: {m}"),
            CliError::SelfCheck(m) => write!(f, "self-check failed: {m}"),
            CliError::Validity(m) => write!(f, "experiment invalid: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Io { .. } | Error::Csv(_) | Error::Header(_) | Error::Row { .. } | Error::Empty(_) => {
                CliError::Io(message)
            }
            Error::ExclusionCap { .. } | Error::InvalidConfig(_) => CliError::Validity(message),
            _ => CliError::Model(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
