use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // normalization
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate variance: all pooled values are equal")]
    DegenerateVariance,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    // search
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("every calibration forecast failed at sigma_t = {delta}")]
    AllForecastsFailed { delta: f64 },

    // forecasting
    #[error("response contains no numbers")]
    NoNumbers,
    #[error("response contains {found} numbers, {needed} required")]
    TooFewNumbers { found: usize, needed: usize },
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("unknown series id `{0}` in replay fixture")]
    ReplayMissing(String),

    // tokenizer
    #[error("malformed vocab line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate rank {rank} at vocab line {line}")]
    DuplicateRank { rank: u32, line: usize },
    #[error("byte 0x{0:02x} is not in the vocabulary")]
    UnencodableByte(u8),
    #[error("vocabulary is empty")]
    EmptyVocab,

    // datasets
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparsable row {row}: {reason}")]
    UnparsableRow { row: usize, reason: String },
    #[error("insufficient series for context length {context_len}: requested {requested}, found {found}")]
    InsufficientSeries { context_len: usize, requested: usize, found: usize },
    #[error("schema violation at line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },

    // evaluation
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no successful series to score")]
    NoSuccessfulSeries,
    #[error("baseline value must be positive, got {0}")]
    NonPositiveBaseline(f64),

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
        Error::Io { path: path.into(), source }
    }

    /// Errors worth another attempt against a remote backend.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Network(_) | Error::NoNumbers | Error::TooFewNumbers { .. })
    }
}
