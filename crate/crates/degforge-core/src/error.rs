use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A persisted artifact failed consistency checks on load.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A checkpoint or manifest could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at {unit} {index}: loss = {loss}")]
    TrainingDiverged {
        unit: &'static str,
        index: usize,
        loss: f32,
    },

    /// The degradation classifier failed its accuracy gate and must not be
    /// used for entropy measurements.
    #[error(
        "classifier unusable: held-out accuracy {accuracy:.4} \u{2264} 3x chance ({chance:.4})"
    )]
    ClassifierUnusable { accuracy: f64, chance: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        source: image::ImageError,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
