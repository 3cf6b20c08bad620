use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("rank {0} exceeds the maximum of 8")]
    RankOverflow(usize),
    #[error("empty shape")]
    EmptyShape,
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("invalid range [{lo}, {hi})")]
    InvalidRange { lo: f32, hi: f32 },
    #[error("invalid count {0}: need at least 2")]
    InvalidCount(usize),
    #[error("invalid camera {cam_id}: {reason}")]
    InvalidCamera { cam_id: u32, reason: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid depth bins: {0}")]
    InvalidDepthBins(String),
    #[error("invalid height set: {0}")]
    InvalidHeights(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("scene has no cameras")]
    NoCameras,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("missing weight tensor {0:?}")]
    MissingWeight(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs or configuration rather
    /// than by a failure while processing them.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json { .. }
                | Error::InvalidRange { .. }
                | Error::InvalidCount(_)
                | Error::InvalidCamera { .. }
                | Error::InvalidGrid(_)
                | Error::InvalidDepthBins(_)
                | Error::InvalidHeights(_)
                | Error::InvalidScene(_)
                | Error::NoCameras
        )
    }
}
