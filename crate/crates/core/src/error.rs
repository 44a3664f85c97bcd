use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} outside [1, {max}]")]
    StepOutOfRange { t: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding dimension {0} is odd")]
    OddDimension(usize),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("patch size {p} exceeds image {h}x{w}")]
    PatchTooLarge { p: usize, h: usize, w: usize },
    #[error("window at ({u}, {v}) of size {p} leaves a {h}x{w} tensor")]
    OutOfBounds { u: usize, v: usize, p: usize, h: usize, w: usize },
    #[error("pixel ({u}, {v}) is not covered by any patch")]
    CoverageHole { u: usize, v: usize },
    #[error("image {h}x{w} smaller than required {min}")]
    ImageTooSmall { h: usize, w: usize, min: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("shape {0} leaves the frame")]
    ShapeOutOfFrame(usize),
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("checkpoint incompatible with dataset: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
