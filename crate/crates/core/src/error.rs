use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("nonpositive geometry: {0}")]
    NonPositiveGeometry(String),
    #[error("scene is empty")]
    EmptyScene,
    #[error("scatterer {scatterer} coincides with an antenna of pose {pose}")]
    Singularity { pose: usize, scatterer: usize },
    #[error("aperture is not uniform: {0}")]
    NonUniformAperture(String),
    #[error("algorithm does not match aperture geometry: {0}")]
    GeometryMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Singularity { .. } | Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
