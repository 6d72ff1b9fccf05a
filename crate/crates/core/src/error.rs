use std::path::PathBuf;

/// Errors raised anywhere in the refinement toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("critic protocol error: {0}")]
    CriticProtocol(String),

    #[error("critic did not respond within {0:?}")]
    CriticTimeout(std::time::Duration),

    #[error("could not place occluders with enough visible target pixels after {attempts} attempts")]
    VisibilityExhausted { attempts: usize },

    #[error("background pool is empty")]
    EmptyBackgroundPool,

    #[error("estimate/ground-truth keys do not align: {0}")]
    KeyMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 for bad configuration or inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::KeyMismatch(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Image { .. }
            | Error::EmptyMesh
            | Error::EmptyBackgroundPool => 2,
            _ => 1,
        }
    }

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
