//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by problem construction, schedules, the engine and the
/// experiment layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid sizes, ranges or inconsistent configuration fields.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition (e.g. out-of-range index).
    #[error("usage error: {0}")]
    Usage(String),

    /// A federated-protocol step was invoked at the wrong instant.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The theoretical step-size law is undefined for the given inputs.
    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    /// A measurement could not be carried out (e.g. all probe pairs coincide).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Not enough data points, or degenerate data, for a complexity fit.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
