//! Library side of the experiment runner: configuration, checkpoint
//! format, and the command implementations. The `quadnet` binary is a
//! thin argument parser over these.

pub mod checkpoint;
pub mod commands;
pub mod config;

use quadnet::error::Error;

/// Top-level failure, mapped onto the documented exit codes
/// (0 success, 1 threshold/training failure, 2 input/validation error).
#[derive(Debug)]
pub enum CliError {
    /// Bad command line or unusable configuration (exit 2).
    Usage(String),
    /// Library error; validation problems exit 2, runtime aborts exit 1.
    Lib(Error),
    /// A check ran and failed its threshold (exit 1).
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Threshold(_) => 1,
            CliError::Lib(Error::NonFiniteLoss { .. }) => 1,
            CliError::Lib(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("error: {m}"),
            CliError::Threshold(m) => m.clone(),
            CliError::Lib(e) => format!("error: {e}"),
        }
    }
}
