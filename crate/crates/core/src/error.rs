use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A layer or operator configured with values that cannot work.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    DegenerateStatistics(usize),

    #[error("backward already ran on this tape; call reset_grads before running it again")]
    DoubleBackward,

    #[error("non-finite value produced at layer `{layer}`")]
    NumericFault { layer: String },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("operation not allowed in {0} mode")]
    Mode(&'static str),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("degenerate class weights: {0}")]
    DegenerateWeights(String),

    #[error("image not found: {}", .0.display())]
    ImageNotFound(PathBuf),

    #[error("malformed image {}: {reason}", .path.display())]
    MalformedImage { path: PathBuf, reason: String },

    #[error("unsupported image format in {}", .0.display())]
    UnsupportedFormat(PathBuf),

    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at epoch {epoch}: non-finite loss (last good checkpoint: {last_good})")]
    TrainingDiverged { epoch: usize, last_good: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
