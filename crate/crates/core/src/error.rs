use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by file decoding. Offsets are byte positions in the input.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("malformed header at offset {offset}: {message}")]
    BadHeader { offset: usize, message: String },
    #[error("truncated payload at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimensions {width}x{height} (x{channels}) overflow addressable size")]
    DimensionOverflow {
        width: u64,
        height: u64,
        channels: u64,
    },
    #[error("expected {expected} channels, found {found}")]
    ChannelCount { expected: u32, found: u32 },
    #[error("non-finite value at offset {offset}")]
    NonFinite { offset: usize },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("run-length counts sum to {sum}, expected {expected}")]
    RleCountMismatch { sum: u64, expected: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("object is empty")]
    EmptyObject,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("IoU threshold {0} unsupported; matching requires 0.5 <= t < 1")]
    UnsupportedThreshold(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("label id {id} exceeds the 16-bit PGM range")]
    IdOverflow { id: u32 },
    #[error("manifest schema error: {0}")]
    Schema(String),
    #[error("predictor failure: {0}")]
    Predictor(String),
    #[error("tile {tile}: {source}")]
    Tile {
        tile: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    FormatData(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch { left, right }
    }

    /// True for errors caused by a bad parameter value rather than by the
    /// input files or their contents.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidValue(_) | Error::UnsupportedThreshold(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
