//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown scenario preset '{0}'")]
    UnknownPreset(String),

    #[error("user {user_id} has no sector it is allowed to attach to")]
    NoAllowedSector { user_id: usize },

    #[error("missing link gain for sector {sector_id}, user {user_id}")]
    MissingGain { sector_id: usize, user_id: usize },

    #[error("cluster translation requires exactly one deployable base station, found {0}")]
    DeployableCount(usize),

    #[error("translation distance must be non-negative, got {0}")]
    NegativeDistance(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
