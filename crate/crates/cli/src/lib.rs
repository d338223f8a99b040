//! Command-line harness around the `maxaffine-attn` constructions: a registry of
//! target functions, construction runs with Monte Carlo error reports, parameter
//! sweeps and a self-check suite.

pub mod config;
pub mod plot;
pub mod registry;
pub mod report;
pub mod runner;
pub mod verify;

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] maxaffine_attn::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} checks failed")]
    VerifyFailed { failed: usize, total: usize },
}

impl CliError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 usage, 2 failed verification, 3 resource cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::VerifyFailed { .. } => 2,
            Self::Core(maxaffine_attn::Error::CapExceeded { .. }) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
