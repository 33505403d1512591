//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: invalid tag `{tag}` (expected O, B-X or I-X)")]
    InvalidTag {
        path: String,
        line: usize,
        tag: String,
    },

    #[error("invalid {scheme} transition `{prev}` -> `{tag}` at token {pos}")]
    InvalidTransition {
        scheme: String,
        prev: String,
        tag: String,
        pos: usize,
    },

    #[error("span ({a},{b}) out of range for a {len}-token sentence")]
    SpanOutOfRange { a: usize, b: usize, len: usize },

    #[error("duplicate span ({a},{b}) with label `{label}`")]
    DuplicateSpan { a: usize, b: usize, label: String },

    #[error("{path}:{line}: embedding has {got} values, expected {expected}")]
    DimMismatch {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("bad shape for {what}: {details}")]
    BadShape { what: &'static str, details: String },

    #[error("support set is empty")]
    EmptySupport,

    #[error("gold and predicted corpora are misaligned: {details}")]
    MisalignedCorpora { details: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    DivergedLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("checkpoint digest mismatch: header says {stored}, file hashes to {computed}")]
    DigestMismatch { stored: String, computed: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error in `{field}`: {msg}")]
    ConfigError { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::ConfigError {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime state.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::ConfigError { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
