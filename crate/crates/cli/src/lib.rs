//! Config loading, checked-in scenarios and the four command runners behind
//! the `dispml` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod scenarios;

use std::path::PathBuf;

use dispml::blocksys::BlockError;
use dispml::nlsolve::NlError;
use dispml::tdsim::TdsimError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("expectation failed: {0}")]
    Expectation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for anything wrong with the inputs, 3 for a failed expectation.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } => 2,
            CliError::Expectation(_) => 3,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<TdsimError> for CliError {
    fn from(e: TdsimError) -> Self {
        match e {
            TdsimError::CflViolation { .. } | TdsimError::InvalidConfig(_) | TdsimError::Block(BlockError::InvalidVariantParams { .. }) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<NlError> for CliError {
    fn from(e: NlError) -> Self {
        match e {
            NlError::Sim(inner) => inner.into(),
            NlError::Invalid(_) | NlError::KernelResolutionMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<BlockError> for CliError {
    fn from(e: BlockError) -> Self {
        match e {
            BlockError::InvalidVariantParams { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
