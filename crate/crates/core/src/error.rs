use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {symbol}: expected {expected}, got {actual}")]
    DimensionMismatch {
        symbol: String,
        expected: String,
        actual: String,
    },
    #[error("code matrix B^{k} has a non-binary entry {value} at ({row}, {col})")]
    NonBinaryCode {
        k: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("rotation R^{k} is not orthogonal (defect {defect:e})")]
    NonOrthogonalRotation { k: usize, defect: f64 },
    #[error("{what} index {index} out of range (valid: {valid})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        valid: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("kernel width for modality {modality} is zero (all samples coincide with all anchors)")]
    DegenerateSigma { modality: usize },
    #[error("linear system for {0} is not positive definite")]
    SingularSystem(String),
    #[error("SVD failed to converge for R^{k}")]
    SvdFailure { k: usize },
    #[error("no code length of {bits} bits in this model (available: {available:?})")]
    UnknownLength { bits: usize, available: Vec<usize> },
    #[error("expected a +1/-1 entry, got {value} at ({row}, {col})")]
    NonBinaryInput { row: usize, col: usize, value: f64 },
    #[error("code length mismatch: {left} bits vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("query has no relevant database items")]
    NoRelevantItems,
    #[error("no query has a relevant database item")]
    NoValidQueries,
    #[error("exhaustive search over 2^{size} sign patterns exceeds the limit of 2^{limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("non-finite value at ({row}, {col}) in {what}")]
    NonFinite { what: &'static str, row: usize, col: usize },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: file truncated ({actual} bytes, expected {expected})")]
    TruncatedFile { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: {actual} bytes, expected {expected}; trailing data")]
    TrailingBytes { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: unsupported dtype {dtype}")]
    UnsupportedDtype { path: PathBuf, dtype: u32 },
    #[error("{path}: invalid packed codes: {reason}")]
    InvalidCodes { path: PathBuf, reason: String },
    #[error("missing model file {path} ({what})")]
    MissingFile { path: PathBuf, what: String },
    #[error("{path}: shape {actual:?} does not match manifest shape {expected:?}")]
    ShapeMismatch {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("code lengths must be strictly increasing, got {0:?}")]
    NonIncreasingLengths(Vec<usize>),
    #[error("weight {name} must be nonnegative, got {value}")]
    NegativeWeight { name: String, value: f64 },
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonBinaryCode { .. } => "NonBinaryCode",
            Error::NonOrthogonalRotation { .. } => "NonOrthogonalRotation",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::EmptyInput(_) => "EmptyInput",
            Error::DegenerateSigma { .. } => "DegenerateSigma",
            Error::SingularSystem(_) => "SingularSystem",
            Error::SvdFailure { .. } => "SvdFailure",
            Error::UnknownLength { .. } => "UnknownLength",
            Error::NonBinaryInput { .. } => "NonBinaryInput",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NoRelevantItems => "NoRelevantItems",
            Error::NoValidQueries => "NoValidQueries",
            Error::TooLarge { .. } => "TooLarge",
            Error::InvalidParam(_) => "InvalidParam",
            Error::NonFinite { .. } => "NonFinite",
            Error::BadMagic { .. } => "BadMagic",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::TrailingBytes { .. } => "TrailingBytes",
            Error::UnsupportedDtype { .. } => "UnsupportedDtype",
            Error::InvalidCodes { .. } => "InvalidCodes",
            Error::MissingFile { .. } => "MissingFile",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::UnknownKey(_) => "UnknownKey",
            Error::NonIncreasingLengths(_) => "NonIncreasingLengths",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::Config(_) => "Config",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn dims(symbol: impl Into<String>, expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            symbol: symbol.into(),
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
