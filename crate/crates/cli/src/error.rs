use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] abcde_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} is not a run directory (no manifest.json)")]
    NotARun(PathBuf),
    #[error("artifact {0} has not been produced in this run")]
    MissingArtifact(String),
    #[error("artifact {artifact} is stale: {reason}")]
    StaleArtifact { artifact: String, reason: String },
    #[error("no dataset given and none recorded in the run")]
    NoDataset,
    #[error("unknown task {0}")]
    UnknownTask(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
