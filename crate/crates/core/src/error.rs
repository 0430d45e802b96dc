use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    /// Weighted normal equations of the local quadratic fit are singular.
    #[error("degenerate expansion window at ({x}, {y})")]
    DegenerateWindow { x: usize, y: usize },

    #[error("frame {width}x{height} is too small: {reason}")]
    FrameTooSmall {
        width: usize,
        height: usize,
        reason: String,
    },

    #[error("accumulator configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt frame {index}: {reason}")]
    CorruptFrame { index: usize, reason: String },

    #[error("frame {index} is {width}x{height}, stream started at {expected_width}x{expected_height}")]
    DimensionChange {
        index: usize,
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("no frames found in {0}")]
    EmptySource(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    /// Wraps a lower-level error with the analysis window and frame it occurred in.
    #[error("window {window} (frame {frame}): {source}")]
    InWindow {
        window: usize,
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_width: expected.0,
            expected_height: expected.1,
            width: got.0,
            height: got.1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
