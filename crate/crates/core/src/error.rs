use thiserror::Error;

/// Every failure the core crate can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid advice: {0}")]
    Advice(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("planning error: no path from {from:?} to {to:?}")]
    Planning { from: (i32, i32), to: (i32, i32) },

    #[error("coach error: {0}")]
    Coach(String),

    #[error("expert error: {0}")]
    Expert(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("collection error: {0}")]
    Collection(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
