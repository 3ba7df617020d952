use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{column}` in {context}")]
    MissingColumn { column: String, context: String },

    #[error("negative measure at row {row_id}, column `{column}`: {value}")]
    NegativeMeasure {
        row_id: u64,
        column: String,
        value: f64,
    },

    #[error("parse failure at line {line}, column `{column}`: {message}")]
    ParseFailure {
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("table failed validation: {0}")]
    Invalid(String),

    #[error("no splitting threshold for measure attribute `{0}`")]
    MissingThreshold(String),

    #[error("splitting threshold for `{attribute}` must be positive and finite, got {value}")]
    BadThreshold { attribute: String, value: f64 },

    #[error("attribute `{0}` is not a conditional attribute")]
    KeyAttributeNotConditional(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("group privacy needs at least one record")]
    EmptyGroup,

    #[error("privacy losses must be finite and non-negative, got {0}")]
    NegativeLoss(f64),

    #[error("supremum certificate must be finite and non-negative, got {0}")]
    NegativeSup(f64),

    #[error("sigma must be positive and finite, got {0}")]
    NonpositiveSigma(f64),

    #[error("tau must be positive and finite, got {0}")]
    NonpositiveTau(f64),

    #[error("{name} must be positive and finite, got {value}")]
    NonpositiveInput { name: &'static str, value: f64 },

    #[error("unsupported query kind: {0}")]
    UnsupportedKind(String),

    #[error("no top-code for measure attribute `{0}`")]
    MissingTopCode(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("true answer is zero for {0}; relative error undefined")]
    ZeroTruth(String),

    #[error("gamma must lie in (0, 1), got {0}")]
    BadGamma(f64),

    #[error("tail index must exceed 1 and truncation bound must be at least 1 (alpha={alpha}, delta={delta})")]
    BadTailIndex { alpha: f64, delta: f64 },

    #[error("unknown row id {0}")]
    UnknownRowId(u64),

    #[error("table is empty")]
    EmptyTable,

    #[error("invalid category weights: {0}")]
    BadWeights(String),

    #[error("invalid generator parameters: {0}")]
    BadParams(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs (configuration, schema, data
    /// validation) rather than failures while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } => false,
            Error::Csv(e) => !matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => true,
        }
    }
}
