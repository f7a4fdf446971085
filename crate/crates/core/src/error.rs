use std::path::PathBuf;

pub type Result<T, E = BokehError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BokehError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported bit depth {0}")]
    UnsupportedBitDepth(u32),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("image dimensions must be nonzero")]
    ZeroDimension,

    #[error("invalid kernel size {0}: must be odd and positive")]
    InvalidKernelSize(usize),

    #[error("kernel size {size} too large for a {width}x{height} image")]
    KernelTooLarge { size: usize, width: usize, height: usize },

    #[error("expected {expected} weight levels, got {actual}")]
    LevelMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("image {width}x{height} smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error("dataset is empty")]
    EmptyDataset,
}

impl BokehError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BokehError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        BokehError::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
