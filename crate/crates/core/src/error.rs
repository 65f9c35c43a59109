use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image is too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("flat region is too small: {width}x{height}, need at least {min}x{min}")]
    RegionTooSmall { width: usize, height: usize, min: usize },

    #[error("window of size {window} does not fit a {height}x{width} image")]
    WindowLargerThanImage { height: usize, width: usize, window: usize },

    #[error("bad patch geometry: {0}")]
    BadGeometry(String),

    #[error("patch at ({row}, {col}) of size {size} falls outside a {height}x{width} buffer")]
    OutOfBounds { row: usize, col: usize, size: usize, height: usize, width: usize },

    #[error("pixel ({row}, {col}) received no patch estimate")]
    UncoveredPixel { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pixel value {value} is below the pedestal {pedestal}, Poisson rate would be negative")]
    NegativeRate { value: f64, pedestal: f64 },

    #[error("noise fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("k = {k} exceeds the number of points {points}")]
    KExceedsPoints { k: usize, points: usize },

    #[error("mosaic dimensions must be even, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },

    #[error("value {0} is outside [0, 1]")]
    ValueOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported or malformed image file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
