use std::path::PathBuf;

use thiserror::Error;

use crate::nets::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence {
        step: u64,
        reason: String,
        /// Most recent checkpoint whose losses were all finite.
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("refusing to overwrite {}; pass --overwrite", .0.display())]
    OutputExists(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
