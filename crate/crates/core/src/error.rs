use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EpvtError>;

#[derive(Debug, Error)]
pub enum EpvtError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("image already carries a {0} overlay; overlays can only be applied to clean images")]
    DoubleOverlay(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("weights are not on the probability simplex (sum = {sum})")]
    SimplexViolation { sum: f64 },

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: usize, diagnostics: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unsupported for this method: {0}")]
    UnsupportedMethod(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("malformed manifest at line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint is malformed: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint array `{name}` has shape {found:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint array `{name}` has element type {found}, expected {expected}")]
    CheckpointType {
        name: String,
        found: String,
        expected: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image export failed: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl EpvtError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
