use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not belong to this network state")]
    StaleCache,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),

    #[error("episode already finished; reset the environment first")]
    EpisodeFinished,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("keep fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid reference scores: {0}")]
    InvalidReferences(String),

    #[error(
        "expert training never produced a snapshot inside the medium band [{low}, {high}] \
         (best normalized score seen {best:.3})"
    )]
    MediumBandNotReached { low: f64, high: f64, best: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
