use thiserror::Error;

/// Errors produced by the adaptation engine and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("row {row} has norm {norm:e}, at or below the normalization guard")]
    NearZeroRow { row: usize, norm: f64 },

    #[error("cluster weights sum to {0}, expected a positive total")]
    DegenerateWeights(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image has no proposals")]
    EmptyImage,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
