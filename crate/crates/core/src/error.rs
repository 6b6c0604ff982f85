use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants map one-to-one onto the stable error codes returned by
/// [`Error::code`], which the command-line front end prints verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("channel {channel} has zero standard deviation")]
    ConstantChannel { channel: usize },
    #[error("invalid range: lo ({lo}) must be strictly less than hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid window: length {length}, stride {stride}, samples {samples}")]
    InvalidWindow {
        length: usize,
        stride: usize,
        samples: usize,
    },
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("value {0} outside the companding domain [-1, 1]")]
    Domain(f64),
    #[error("no data supplied")]
    EmptyData,
    #[error("vocabulary size {0} is too small (need at least 2)")]
    InvalidVocab(usize),
    #[error("quantile bin edges are not strictly increasing")]
    DegenerateQuantiles,
    #[error("vocabulary mismatch: expected {expected}, got {actual}")]
    VocabMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache does not belong to the current state of this layer")]
    StaleCache,
    #[error("context of {len} tokens exceeds the receptive field of {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("token histogram is empty")]
    EmptyHistogram,
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("window of {window} samples is longer than the signal ({samples})")]
    WindowTooLong { window: usize, samples: usize },
    #[error("frequency grids differ")]
    GridMismatch,
    #[error("lag {lag} is too large for {samples} samples")]
    LagTooLarge { lag: i64, samples: usize },
    #[error("loss curve is degenerate: {0}")]
    DegenerateCurve(String),
    #[error("group is degenerate: {0}")]
    DegenerateGroup(String),
    #[error("only one class present in the training labels")]
    SingleClass,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::ConstantChannel { .. } => "CONSTANT_CHANNEL",
            Error::InvalidRange { .. } => "INVALID_RANGE",
            Error::InvalidWindow { .. } => "INVALID_WINDOW",
            Error::InvalidSeries(_) => "INVALID_SERIES",
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::Domain(_) => "DOMAIN_ERROR",
            Error::EmptyData => "EMPTY_DATA",
            Error::InvalidVocab(_) => "INVALID_VOCAB",
            Error::DegenerateQuantiles => "DEGENERATE_QUANTILES",
            Error::VocabMismatch { .. } => "VOCAB_MISMATCH",
            Error::LabelOutOfRange { .. } => "LABEL_OUT_OF_RANGE",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::StaleCache => "STALE_CACHE",
            Error::ContextTooLong { .. } => "CONTEXT_TOO_LONG",
            Error::EmptyHistogram => "EMPTY_HISTOGRAM",
            Error::ZeroVariance => "ZERO_VARIANCE",
            Error::WindowTooLong { .. } => "WINDOW_TOO_LONG",
            Error::GridMismatch => "GRID_MISMATCH",
            Error::LagTooLarge { .. } => "LAG_TOO_LARGE",
            Error::DegenerateCurve(_) => "DEGENERATE_CURVE",
            Error::DegenerateGroup(_) => "DEGENERATE_GROUP",
            Error::SingleClass => "SINGLE_CLASS",
            Error::Config(_) => "CONFIG_ERROR",
            Error::Format(_) => "FORMAT_ERROR",
            Error::Io(_) => "IO_ERROR",
            Error::Json(_) => "FORMAT_ERROR",
            Error::Csv(_) => "FORMAT_ERROR",
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
