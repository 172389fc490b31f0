//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input outside an operation's numeric domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// State handed to an operation does not belong to it.
    #[error("state error: {0}")]
    State(String),
    /// Wire-level violation: bad magic, version, frame type or payload.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Peer unreachable, disconnected or timed out.
    #[error("transport error: {0}")]
    Transport(String),
    /// A collective failed consistently across the group.
    #[error("collective error: {0}")]
    Collective(String),
    /// Group initialization failed.
    #[error("init error: {0}")]
    Init(String),
    /// Energy meter could not be read.
    #[error("meter error: {0}")]
    Meter(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
