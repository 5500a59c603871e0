use std::path::PathBuf;

use thiserror::Error;

use crate::latency::OpKind;
use crate::sim::SimTime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("record {index}: invalid `{field}`: {message}")]
    Validation {
        index: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown configuration key: {0}")]
    UnknownKey(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("inconsistent device pool: {0}")]
    InconsistentPool(String),

    #[error("no latency profile entry for model `{model}` on `{hardware}` ({op:?})")]
    UnknownProfileKey {
        model: String,
        hardware: String,
        op: OpKind,
    },

    #[error("invalid profile specification: {0}")]
    InvalidSpec(String),

    #[error("invalid latency profile: {0}")]
    InvalidProfile(String),

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),

    #[error("request {0} is missing timestamps")]
    IncompleteRequest(u64),

    #[error("scenario {id}: {source}")]
    Scenario {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (configs, traces, profiles),
    /// as opposed to failures while simulating or writing output.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::InvalidParameter(_)
                | Error::UnknownKey(_)
                | Error::Config(_)
                | Error::InconsistentPool(_)
                | Error::UnknownProfileKey { .. }
                | Error::InvalidSpec(_)
                | Error::InvalidProfile(_)
                | Error::CorruptModelFile(_)
                | Error::File { .. }
        )
    }
}
