use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op} on axis `{axis}`: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op}: probability {value} outside [0, 1]")]
    Probability { op: &'static str, value: f64 },

    #[error("graph terminal node has {0} elements, expected a scalar")]
    NonScalarLoss(usize),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("video `{video}`: feature blob `{}` not found", path.display())]
    MissingBlob { video: String, path: PathBuf },

    #[error("video `{video}`: {what} mismatch, expected {expected}, got {got}")]
    Dimension {
        video: String,
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("video `{video}`: annotation label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        video: String,
        label: usize,
        num_classes: usize,
    },

    #[error("video `{video}`: invalid annotation [{start}, {end}]: {reason}")]
    Annotation {
        video: String,
        start: f64,
        end: f64,
        reason: &'static str,
    },

    #[error("unsupported manifest version `{0}`")]
    ManifestVersion(String),

    #[error("unknown video id `{0}`")]
    UnknownVideo(String),

    #[error("cannot pack {instances} instances of length up to {max_len} into {length} snippets")]
    InfeasiblePacking {
        instances: usize,
        max_len: usize,
        length: usize,
    },

    #[error("sequence of length {length} too short for {levels} pyramid levels")]
    TooShort { length: usize, levels: usize },

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("training diverged at epoch {epoch}, video `{video}`: loss {loss}")]
    Diverged {
        epoch: usize,
        video: String,
        loss: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
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
}
