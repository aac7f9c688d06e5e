use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the library and the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("model checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: objective is not finite")]
    Divergence { epoch: usize },

    #[error("Pearson correlation undefined: {0}")]
    ZeroVariance(String),

    #[error(
        "DP boundary violation: {0}; model fitting and sampling accept only the \
         released DP statistics, never raw population data"
    )]
    DpBoundaryViolation(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    StageFailure {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest integrity: {0}")]
    ManifestIntegrity(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 stage failure, 4 DP boundary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DpBoundaryViolation(_) => 4,
            Error::StageFailure { source, .. } => source.exit_code().max(3),
            Error::InvalidConfig(_) | Error::InvalidArgument(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
