use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("no frames matched {pattern:?} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },
    #[error("dimension mismatch: expected {expected}, got {actual}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DimensionMismatch {
        expected: crate::Dims,
        actual: crate::Dims,
        context: Option<String>,
    },
    #[error("bad flow magic {0} (expected 202021.25)")]
    BadFlowMagic(f32),
    #[error("expected grayscale PFM (header \"Pf\"), found {0:?}")]
    NotGrayscalePfm(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("score value {value} at index {index} outside [0,1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("missing {what} for frame {frame}: {path}")]
    MissingFrameFile {
        what: &'static str,
        frame: usize,
        path: PathBuf,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("sequence of length {0} has no frame pair")]
    SequenceTooShort(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: crate::Dims, actual: crate::Dims) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context: None,
        }
    }
}
