use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checksum mismatch for {path}: expected {expected:016x}, found {found:016x}")]
    Corruption {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(PathBuf),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no valid hypothesis after {iterations} iterations ({rejected} triplets rejected, {degenerate} degenerate fits)")]
    NoHypothesis {
        iterations: usize,
        rejected: usize,
        degenerate: usize,
    },

    #[error("no correspondences within {max_distance} on the first ICP iteration")]
    NoOverlap { max_distance: f64 },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}
