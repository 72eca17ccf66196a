use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Tm3Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("box {x:.2},{y:.2},{w:.2},{h:.2} does not intersect the {width}x{height} image")]
    OutOfFrame {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("region {width}x{height} is not divisible into {patch}x{patch} patches")]
    NotDivisible {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

pub type Result<T, E = Tm3Error> = std::result::Result<T, E>;
