use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("series {series_id}: timestamp {timestamp} is not after its predecessor")]
    NonMonotoneTimestamps { series_id: i64, timestamp: String },
    #[error("series {series_id}: gap before timestamp {timestamp}")]
    GapInSeries { series_id: i64, timestamp: String },
    #[error("line {line}: {message}")]
    InvalidRecord { line: u64, message: String },
    #[error("duplicate series id {0}")]
    DuplicateSeries(i64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("window of {needed} steps does not fit series of length {len}")]
    WindowTooLong { needed: usize, len: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("attention query row {row} has every key masked")]
    AllMaskedRow { row: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("kernel size {kernel} too large for sequence of length {len}")]
    KernelTooLarge { kernel: usize, len: usize },
    #[error("loss coefficient `{name}` must be positive, got {value}")]
    NonPositiveCoefficient { name: &'static str, value: f64 },
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("validation split is empty")]
    EmptyValidationSplit,
    #[error("sum of |y| is zero")]
    ZeroDenominator,
    #[error("forecast result carries no ground truth")]
    MissingGroundTruth,
    #[error("history of length {len} shorter than period {period}")]
    HistoryTooShort { len: usize, period: usize },
    #[error("series id {id} outside embedding table of {n_series} rows")]
    UnknownSeries { id: i64, n_series: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error lines and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonMonotoneTimestamps { .. } => "NonMonotoneTimestamps",
            Error::GapInSeries { .. } => "GapInSeries",
            Error::InvalidRecord { .. } => "InvalidRecord",
            Error::DuplicateSeries(_) => "DuplicateSeries",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::WindowTooLong { .. } => "WindowTooLong",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::AllMaskedRow { .. } => "AllMaskedRow",
            Error::NonFinite(_) => "NonFinite",
            Error::NonPositiveSigma(_) => "NonPositiveSigma",
            Error::EvenKernel(_) => "EvenKernel",
            Error::KernelTooLarge { .. } => "KernelTooLarge",
            Error::NonPositiveCoefficient { .. } => "NonPositiveCoefficient",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptyValidationSplit => "EmptyValidationSplit",
            Error::ZeroDenominator => "ZeroDenominator",
            Error::MissingGroundTruth => "MissingGroundTruth",
            Error::HistoryTooShort { .. } => "HistoryTooShort",
            Error::UnknownSeries { .. } => "UnknownSeries",
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
