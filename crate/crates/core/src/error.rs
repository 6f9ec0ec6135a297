//! Error type shared across the workspace.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by any stage of the pipeline.
///
/// Contract violations (shape mismatches, out-of-range labels) indicate a bug
/// in the caller; the remaining variants are data- or IO-dependent conditions
/// a caller may want to recover from.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands had incompatible shapes for the requested operation.
    #[error("dimension mismatch in {context}: {detail}")]
    DimensionMismatch {
        context: &'static str,
        detail: String,
    },

    /// A matrix contained a NaN or infinite entry where finiteness is required.
    #[error("non-finite value in {context} at row {row}, col {col}")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    /// The normal equations were numerically singular (only possible when the
    /// ridge term is zero).
    #[error("singular system: {detail}")]
    Singular { detail: String },

    /// A row that must have positive mass summed to zero.
    #[error("degenerate row {row}: sum is zero, cannot normalize")]
    DegenerateRow { row: usize },

    /// Training produced a non-finite loss or gradient.
    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// Fewer points than clusters.
    #[error("insufficient points: n = {n} < k = {k}")]
    InsufficientPoints { n: usize, k: usize },

    /// A label was outside `[0, k)`.
    #[error("label {label} out of range for k = {k} at position {index}")]
    LabelOutOfRange {
        label: usize,
        k: usize,
        index: usize,
    },

    /// A client shares no samples with the anchor client, so its cluster
    /// indices cannot be aligned.
    #[error("alignment impossible: view {view} shares no samples with the anchor view")]
    AlignmentImpossible { view: usize },

    /// A sample id was not found in the global index.
    #[error("missing sample: id {id} not present in the global index")]
    MissingSample { id: u64 },

    /// A sample was absent from every view.
    #[error("indicator violation: sample row {row} is absent from every view")]
    IndicatorViolation { row: usize },

    /// No sample is present in all views, so global prototypes are undefined.
    #[error("no fully-overlapping samples: global prototypes are undefined")]
    NoOverlap,

    /// `impute` was called before `fit_view_patterns`.
    #[error("view patterns not fitted: fit_view_patterns must run before impute")]
    PatternsNotFitted,

    /// Wire-format decoding failed.
    #[error("deserialization error at offset {offset}: {detail}")]
    Deserialize { offset: usize, detail: String },

    /// A dataset file had a malformed row.
    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },

    /// A dataset file violated the schema (ragged rows, duplicate ids, ...).
    #[error("schema error in {file}: {detail}")]
    Schema { file: String, detail: String },

    /// A configuration value was rejected.
    #[error("invalid config: {detail}")]
    InvalidConfig { detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context,
            detail: detail.into(),
        }
    }
}
