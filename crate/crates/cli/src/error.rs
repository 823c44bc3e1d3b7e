use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    IngestLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{stage} failed: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: linenarrow::Error,
    },

    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 configuration, 3 ingestion, 4 numeric or
    /// pipeline failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ingest { .. } | CliError::IngestLine { .. } => 3,
            CliError::Pipeline { .. } | CliError::Output { .. } => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
