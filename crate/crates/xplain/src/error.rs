//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the engine, the augmentation pipeline, the metric
/// kernels and the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model format error at line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("layer {layer} ({kind}): {message}")]
    LayerConfig {
        layer: usize,
        kind: String,
        message: String,
    },

    #[error("shape mismatch at layer {layer} ({kind}): expected {expected}, got {got}")]
    ShapeMismatch {
        layer: usize,
        kind: String,
        expected: String,
        got: String,
    },

    #[error("non-finite weight in layer {layer} ({kind})")]
    NonFiniteWeight { layer: usize, kind: String },

    #[error("truncated weight payload: layer {layer} needs {expected} floats, {got} left")]
    TruncatedPayload {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("model has no layers")]
    EmptyModel,

    #[error("class index {class} out of range (num_classes = {num_classes})")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("image dimensions {got} do not match model input {expected}")]
    ImageDimensions { expected: String, got: String },

    #[error("integration steps must be >= 2, got {0}")]
    TooFewSteps(usize),

    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("{op} requires an equivariant augmentation, got {kind}")]
    NotEquivariant { op: &'static str, kind: String },

    #[error("invalid augmentation interval for {kind}: [{low}, {high}] with {samples} samples")]
    InvalidInterval {
        kind: String,
        low: f64,
        high: f64,
        samples: usize,
    },

    #[error("correlation undefined: inputs constant over the mask")]
    UndefinedCorrelation,

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("curve does not cover the interval: {0}")]
    IntervalNotCovered(String),

    #[error("probability curve score is zero; S ratio undefined")]
    ZeroProbabilityScore,

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("unknown method id '{0}'")]
    UnknownMethod(String),

    #[error("unknown augmentation kind '{0}'")]
    UnknownKind(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
