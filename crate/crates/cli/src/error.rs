use std::fmt;
use std::process::ExitCode;

use prefcurate::btrm::{BtrmError, CheckpointError};
use prefcurate::curate::CurateError;
use prefcurate::jsonl::JsonlError;
use prefcurate::rundir::RunDirError;

/// A failed command, split by whose fault it is.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, bad config or a run in the wrong state. Exit 1.
    User(String),
    /// Something broke that the user could not have prevented. Exit 2.
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<RunDirError> for CliError {
    fn from(e: RunDirError) -> Self {
        match e {
            RunDirError::Locked(_) => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<CurateError> for CliError {
    fn from(e: CurateError) -> Self {
        match e {
            CurateError::EmptyPool(_)
            | CurateError::InsufficientGold { .. }
            | CurateError::Config(_)
            | CurateError::MissingEmbedding(_)
            | CurateError::GoldWithoutHumanVerdict(_) => CliError::User(e.to_string()),
            CurateError::Model(BtrmError::Config(_)) => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<BtrmError> for CliError {
    fn from(e: BtrmError) -> Self {
        match e {
            BtrmError::Config(_) | BtrmError::Empty(_) | BtrmError::DimMismatch { .. } => {
                CliError::User(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Internal(format!("checkpoint: {e}"))
    }
}
