use std::path::PathBuf;

/// Errors produced by the inpainting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} not found", .0.display())]
    NotFound(PathBuf),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("resolution mismatch: expected {expected:?}, got {actual:?}")]
    Resolution {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("unsupported gaussian file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("unknown inpainting backend `{0}`")]
    UnknownBackend(String),

    #[error("inpainting backend failed: {0}")]
    Inpaint(String),

    #[error("no valid depth overlap")]
    NoDepthOverlap,

    #[error("no gaussians with label {0}")]
    LabelAbsent(u8),

    #[error("empty point cloud")]
    EmptyPointCloud,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.into())
        } else {
            Error::Io {
                path: path.into(),
                source,
            }
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            message: message.into(),
        }
    }
}
