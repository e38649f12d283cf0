use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("pixel ({x}, {y}) is outside a {width}x{height} map")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("no pixel is valid in both prediction and ground truth")]
    EmptyMask,

    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),

    #[error("no records found under {0}")]
    EmptyCorpus(PathBuf),

    #[error("degenerate split ratios {0:?}: each must be positive and they must sum to 1")]
    DegenerateRatios([f64; 3]),

    #[error("malformed {format} file {path}: {reason}")]
    Malformed {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("unsupported EXR layout in {path}: {reason}")]
    UnsupportedExr { path: PathBuf, reason: String },

    #[error("no depth channel in {path} (available: {available:?})")]
    ChannelNotFound {
        path: PathBuf,
        available: Vec<String>,
    },

    #[error("disparity {value} px cannot be stored in a 16-bit PNG (max {max} px)")]
    ValueOutOfRange { value: f32, max: f32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Shape(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Exr(#[from] exr::error::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
