use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample {sample_id} has label {label}, expected a value in [0, {num_classes})")]
    LabelOutOfRange {
        sample_id: String,
        label: usize,
        num_classes: usize,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("architecture unsupported for source-style synthesis: {0}")]
    UnsupportedArchitecture(String),

    #[error("class-count mismatch: model has {model} classes, label set has {expected}")]
    ClassMismatch { model: usize, expected: usize },

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("class {class} ({name}) has no pseudo-labelled samples")]
    EmptyClass { class: usize, name: String },

    #[error("ensemble has no buffered outputs for sample {0}")]
    EmptyHistory(String),

    #[error("unknown sample id {0}")]
    UnknownSample(String),

    #[error("unknown domain transform {0:?}")]
    UnknownTransform(String),

    #[error("refinement diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("synthesis produced a non-finite loss at step {step} (ce {ce}, tv {tv}, bn {bn})")]
    NonFiniteSynthesis {
        step: usize,
        ce: f64,
        tv: f64,
        bn: f64,
    },

    #[error("frozen model was modified: {0}")]
    FrozenModelModified(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("cannot decode image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("cannot parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("phase {phase} failed: {message}")]
    PhaseFailed { phase: String, message: String },
}

impl Error {
    /// Whether the error stems from configuration rather than computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ConfigParse(_) | Error::UnknownTransform(_))
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
