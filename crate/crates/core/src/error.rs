use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes of
/// the public operations; the CLI translates them into process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor does not belong to this computation record")]
    StaleRecord,

    #[error("invalid network spec: {0}")]
    BadSpec(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("source batch has {source_rows} rows but target batch has {target_rows}")]
    BatchSizeMismatch { source_rows: usize, target_rows: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, only {available} available")]
    TruncatedFile {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("ragged csv row {row}: expected {expected} fields, found {found}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric value {value:?} in csv row {row}")]
    NonNumeric { row: usize, value: String },

    #[error("operation requires 2-d features, dataset has {0} dimensions")]
    DimensionError(usize),

    #[error("stump enumeration supports at most {max} features, dataset has {found}")]
    TooManyFeatures { max: usize, found: usize },

    #[error("hypothesis set is empty")]
    EmptyHypothesisSet,

    #[error("hypothesis cap exceeded: enumeration would produce {count} stumps, cap is {cap}")]
    HypothesisCapExceeded { count: usize, cap: usize },

    #[error("bound verification requires binary labels, found class {0}")]
    NonBinaryLabels(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
