use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target {point:?} unreachable at waypoint {index}: distance {distance:.3} from base exceeds reach {reach:.3}")]
    Unreachable {
        index: usize,
        point: [f64; 2],
        distance: f64,
        reach: f64,
    },

    #[error("bad magic header in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("rollout aborted after {completed} steps: policy returned a non-finite action")]
    RolloutAborted { completed: usize, partial: Vec<Vec<f64>> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("matrix is not orthogonal (max deviation {0:.3e})")]
    NotOrthogonal(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            actual,
        }
    }
}
