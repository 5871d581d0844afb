use std::path::PathBuf;

use thiserror::Error;

use crate::bundle::FeatureKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample {sample_id}: {which} feature has zero norm")]
    ZeroVector { sample_id: usize, which: FeatureKind },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("format error at byte {offset} ({field}): {reason}")]
    Format {
        offset: u64,
        field: String,
        reason: String,
    },

    #[error("row {row}: only {available} candidates for k = {k}")]
    KTooLarge { row: usize, k: usize, available: usize },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("value out of range for {field}: {value}")]
    OutOfRange { field: String, value: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("identity {0} has fewer than two clothes labels")]
    InsufficientClothes(i32),

    #[error("sample {0} belongs to an identity with a single outfit")]
    SingleOutfitIdentity(usize),

    #[error("cross-clothes differences of sample {0} are all zero")]
    SingleDirection(usize),

    #[error("no anchor in the batch has a valid positive and negative")]
    NoValidAnchor,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("negative rho {0}")]
    NegativeRho(f64),

    #[error("no query has a positive gallery sample after masking")]
    NoEvaluableQueries,

    #[error("bundle failed validation with {} violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidBundle(Vec<crate::bundle::Violation>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
