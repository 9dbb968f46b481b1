use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape {shape:?} needs {expected} values, got {actual}")]
    TensorSize {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("model parse error at byte {offset}: {message}")]
    ModelParse { offset: usize, message: String },

    #[error("relevance trace does not match network: {0}")]
    TraceMismatch(String),

    #[error("layer {layer}: vanishing relevance denominator at output unit {unit}")]
    DegenerateDenominator { layer: usize, unit: usize },

    #[error("invalid rule configuration: {0}")]
    InvalidRules(String),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("class {0:?} has no samples")]
    EmptyClass(String),

    #[error("logistic regression diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("head shape mismatch: expected {expected}, got {actual}")]
    HeadMismatch { expected: String, actual: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("box {x},{y} {width}x{height} outside image {image_width}x{image_height}")]
    BoxOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("netpbm decode error: {0}")]
    Pnm(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TensorSize { .. } => "tensor_size",
            Error::NonFinite(_) => "non_finite",
            Error::Shape { .. } => "shape",
            Error::InvalidNetwork(_) => "invalid_network",
            Error::ModelParse { .. } => "model_parse",
            Error::TraceMismatch(_) => "trace_mismatch",
            Error::DegenerateDenominator { .. } => "degenerate_denominator",
            Error::InvalidRules(_) => "invalid_rules",
            Error::ClassOutOfRange { .. } => "class_out_of_range",
            Error::EmptyClass(_) => "empty_class",
            Error::Diverged { .. } => "diverged",
            Error::HeadMismatch { .. } => "head_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::BoxOutOfBounds { .. } => "box_out_of_bounds",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Pnm(_) => "pnm",
            Error::Manifest { .. } => "manifest",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
