use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("schedule error: epoch {epoch} outside [0, {e_max}]")]
    Schedule { epoch: u32, e_max: u32 },
    #[error("model error: {0}")]
    Model(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("reference light field has zero mean power")]
    ZeroReference,
    #[error("format error: {0}")]
    Format(String),
    #[error("scorer part `{part}` failed: {source}")]
    ScorerPart {
        part: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures of the external scorer client. Every variant leaves the engine in
/// a state where the request can be retried on a fresh connection.
#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("transport failure: {0}")]
    Transport(#[source] io::Error),
    #[error("malformed message: {0}")]
    Protocol(String),
    #[error("protocol version mismatch: {0}")]
    VersionMismatch(String),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("scorer reported an error for request {id:?}: {message}")]
    Remote { id: Option<u64>, message: String },
    #[error("connection closed by scorer")]
    Closed,
}

pub(crate) fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}
