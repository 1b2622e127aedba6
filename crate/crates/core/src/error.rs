use std::path::PathBuf;

use thiserror::Error;

use crate::audio::wav::WavError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{op}: channel mismatch, expected {expected} input channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: input too short ({len} frames)")]
    InputTooShort { op: &'static str, len: usize },

    #[error("feature too short for split: {len} frames with shift fraction {shift_fraction}")]
    FeatureTooShort { len: usize, shift_fraction: f64 },

    #[error("waveform of {len} samples is below the minimum length of {min} samples")]
    MinimumLength { len: usize, min: usize },

    #[error("{op}: time length {len} is not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        len: usize,
        divisor: usize,
    },

    #[error("degenerate batch: batch norm needs at least 2 values per channel, got {count}")]
    DegenerateBatch { count: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this tape")]
    TapeSpent,

    #[error("gradients are not available before backward")]
    NoGradients,

    #[error("non-finite gradient in parameter '{name}'")]
    NonFiniteGradient { name: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot score a zero vector")]
    ZeroVector,

    #[error("score set needs at least one target and one nontarget (targets: {targets}, nontargets: {nontargets})")]
    DegenerateScores { targets: usize, nontargets: usize },

    #[error("missing utterance '{0}'")]
    MissingUtterance(String),

    #[error("corpus has {corpus} speakers but the model classifies {model}")]
    SpeakerMismatch { corpus: usize, model: usize },

    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("trials line {line}: {reason}")]
    Trials { line: usize, reason: String },

    #[error("gradient check failed: max relative error {max} is not below {tolerance}")]
    GradientCheck { max: f64, tolerance: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Wav(#[from] WavError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
