use std::path::PathBuf;

/// Errors produced by the evfeat core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("event ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("ill-conditioned covariance: smallest eigenvalue {smallest_eigenvalue:e}, usable rank {usable_rank} < {requested} requested")]
    Conditioning {
        smallest_eigenvalue: f64,
        usable_rank: usize,
        requested: usize,
    },

    #[error("basis already carries the smoothing kernel")]
    AlreadySmoothed,

    #[error("no displacement candidate is valid for ({x}, {y}, {t})")]
    NoCandidate { x: i64, y: i64, t: u64 },

    #[error("time {t} is outside the trajectory span [{start}, {end}]")]
    Range { t: u64, start: u64, end: u64 },

    #[error("trajectory ids do not pair up: {0}")]
    Pairing(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            message: message.into(),
        }
    }
}
