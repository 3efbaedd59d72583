use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed body: expected {expected} bytes, found {found}")]
    MalformedBody { expected: usize, found: usize },
    #[error("unsupported max-value {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("SNR is undefined for a constant image (pixel variance is zero)")]
    ConstantImage,
    #[error("image {rows}x{cols} is smaller than the {window}x{window} window")]
    ImageTooSmall { rows: usize, cols: usize, window: usize },
    #[error("degenerate support: selected atoms are linearly dependent")]
    DegenerateSupport,
    #[error("invalid config line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
