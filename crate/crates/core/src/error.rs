use std::path::PathBuf;

use crate::decision::DecisionLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
///
/// Every variant maps to a stable upper-case code (see [`Error::code`]) that
/// the CLI prints and that tests match on.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("distribution component {component} is not finite")]
    NonFinite { component: &'static str },

    #[error("distribution component {component} = {value} is negative")]
    NegativeMass { component: &'static str, value: f64 },

    #[error("distribution sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("policy {policy_id}@{version} is already registered")]
    DuplicateVersion { policy_id: String, version: String },

    #[error("aux channel {channel:?} is gated by the policy but absent from the input")]
    MissingAuxChannel { channel: String },

    #[error("policy {policy_id}@{version} is not in the registry")]
    UnknownPolicyVersion { policy_id: String, version: String },

    #[error("input sequence is empty")]
    EmptyInput,

    #[error("confusion matrix has no observations")]
    EmptyMatrix,

    #[error("record {id:?} has no gold label")]
    MissingGold { id: String },

    #[error("decision for {found:?} is aligned with record {expected:?}")]
    IdMismatch { expected: String, found: String },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("n_bins must be at least 2, got {0}")]
    BadBinCount(usize),

    #[error("coverage must lie in (0, 1], got {0}")]
    BadCoverage(f64),

    #[error("threshold grid is empty")]
    EmptyGrid,

    #[error("sweep table is empty")]
    EmptyTable,

    #[error("runs were computed on different splits ({a} vs {b})")]
    SplitMismatch { a: String, b: String },

    #[error("generator config requests no examples")]
    EmptyConfig,

    #[error("training data has no {0} examples")]
    DegenerateData(DecisionLabel),

    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimMismatch { expected: usize, found: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "NON_FINITE",
            Error::NegativeMass { .. } => "NEGATIVE_MASS",
            Error::NotNormalized { .. } => "NOT_NORMALIZED",
            Error::Schema(_) => "SCHEMA_ERROR",
            Error::Range(_) => "RANGE_ERROR",
            Error::DuplicateVersion { .. } => "DUPLICATE_VERSION",
            Error::MissingAuxChannel { .. } => "MISSING_AUX_CHANNEL",
            Error::UnknownPolicyVersion { .. } => "UNKNOWN_POLICY_VERSION",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::EmptyMatrix => "EMPTY_MATRIX",
            Error::MissingGold { .. } => "MISSING_GOLD",
            Error::IdMismatch { .. } => "ID_MISMATCH",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::BadBinCount(_) => "BAD_BIN_COUNT",
            Error::BadCoverage(_) => "BAD_COVERAGE",
            Error::EmptyGrid => "EMPTY_GRID",
            Error::EmptyTable => "EMPTY_TABLE",
            Error::SplitMismatch { .. } => "SPLIT_MISMATCH",
            Error::EmptyConfig => "EMPTY_CONFIG",
            Error::DegenerateData(_) => "DEGENERATE_DATA",
            Error::DimMismatch { .. } => "DIM_MISMATCH",
            Error::Precondition(_) => "PRECONDITION",
            Error::Corrupt { .. } => "CORRUPT_RECORD",
            Error::Record { source, .. } => source.code(),
            Error::Io { .. } => "IO_ERROR",
        }
    }

    /// True for filesystem failures, as opposed to validation failures.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Record { source, .. } => source.is_io(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_record(id: &str, source: Error) -> Self {
        Error::Record {
            id: id.to_string(),
            source: Box::new(source),
        }
    }
}
