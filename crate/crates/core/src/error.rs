use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pose {0} penetrates the socket block")]
    Penetration(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("feature length mismatch: model expects {expected}, observation has {actual}")]
    FeatureMismatch { expected: usize, actual: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: byte {offset}: {msg}")]
    ModelParse { path: String, offset: usize, msg: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version { what: &'static str, found: String, expected: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
