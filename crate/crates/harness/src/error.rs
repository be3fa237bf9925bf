use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes shared by every entry point.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const PARTIAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    /// A problem with the configuration; `key` names the offending entry.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("dataset `{dataset}`: {reason}")]
    Ingest { dataset: String, reason: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run directory: {0}")]
    RunDir(String),

    #[error(transparent)]
    Core(#[from] robench::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => exit::CONFIG,
            _ => exit::PARTIAL,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) trait PathContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> PathContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|source| HarnessError::File {
            path: path.to_path_buf(),
            source,
        })
    }
}
