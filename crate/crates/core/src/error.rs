use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricError;
use crate::numerics::NumericsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training: {0}")]
    Training(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// True for errors caused by invalid user input rather than by the data
    /// or the runtime.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
            || matches!(self, Error::Data(DataError::InvalidArgument(_)))
    }
}
