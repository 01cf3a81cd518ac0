use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image count {images} does not match light count {lights}")]
    CountMismatch { images: usize, lights: usize },

    #[error("light {index} has norm {norm}, expected a unit vector")]
    NonUnitLight { index: usize, norm: f64 },

    #[error("light {index} has a non-positive intensity")]
    NonPositiveIntensity { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative intensity in {0}")]
    NegativeIntensity(&'static str),

    #[error("zero-length normal at pixel (row {row}, col {col})")]
    DegenerateNormal { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("at least 3 lights are required, got {0}")]
    TooFewLights(usize),

    #[error("light directions are ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("mask has no valid pixels")]
    EmptyMask,

    #[error("cannot aggregate an empty feature list")]
    EmptyList,

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad light file {}: {reason}", path.display())]
    BadLightFile { path: PathBuf, reason: String },

    #[error("bad normal file {}: {reason}", path.display())]
    BadNormalFile { path: PathBuf, reason: String },

    #[error("object {0} has no ground-truth normals")]
    NoGroundTruth(String),

    #[error("training diverged at step {step}: total loss {value}")]
    DivergedLoss { step: usize, value: f64 },

    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
