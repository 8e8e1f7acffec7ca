use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("camera transform is singular")]
    SingularTransform,

    #[error("point at or behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("silhouette has no foreground pixels")]
    EmptyForeground,

    #[error("empty point set")]
    Empty,

    #[error("degenerate shape: {0}")]
    Degenerate(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("non-finite loss at step {step}: term {term} = {value}")]
    Divergence { step: usize, term: String, value: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    /// Stable machine-readable category, used for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Invalid(_) => "invalid_argument",
            Error::SingularTransform => "singular_transform",
            Error::BehindCamera { .. } => "behind_camera",
            Error::EmptyForeground => "empty_foreground",
            Error::Empty => "empty",
            Error::Degenerate(_) => "degenerate",
            Error::Format { .. } => "format",
            Error::Divergence { .. } => "divergence",
            Error::Io(_) => "io",
            Error::Json(_) => "format",
        }
    }
}
