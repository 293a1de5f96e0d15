use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading, writing or validating REPSIM01 containers.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"REPSIM01\"")]
    BadMagic { found: Vec<u8> },
    #[error("truncated container: {what} needs {needed} bytes but only {available} are present")]
    Truncated {
        what: String,
        needed: u64,
        available: u64,
    },
    #[error("unsupported schema version {0} (this build reads schema 1)")]
    UnknownSchema(u64),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error("tensor {name:?}: {reason}")]
    Layout { name: String, reason: String },
    #[error("invalid {kind} set: {reason}")]
    Invariant { kind: &'static str, reason: String },
    #[error("container holds {found:?} data, expected {expected:?}")]
    WrongKind { expected: String, found: String },
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected header \"sample_id,label\", found {found:?}")]
    Header { line: usize, found: String },
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: negative label {label}")]
    NegativeLabel { line: usize, label: i64 },
    #[error("label {label} outside declared num_classes {num_classes}")]
    OutOfRange { label: usize, num_classes: usize },
    #[error("sample {0:?} has no label")]
    Missing(String),
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no sample ids in common ({unmatched_a} in a, {unmatched_b} in b)")]
    EmptyIntersection {
        unmatched_a: usize,
        unmatched_b: usize,
    },
    #[error("need at least {needed} aligned samples, found {found}")]
    TooFew { needed: usize, found: usize },
    #[error("sample ids differ at position {position}: {a:?} vs {b:?}")]
    Mismatch {
        position: usize,
        a: String,
        b: String,
    },
}

/// Numeric and shape errors raised by the analysis modules.
#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("similarity undefined: {0}")]
    Undefined(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no layers or groups match {0:?}")]
    EmptyMatch(String),
    #[error("selection is empty: {0}")]
    EmptySelection(String),
    #[error("layer {0:?} not found")]
    UnknownLayer(String),
    #[error("pooling mode {mode} incompatible with tensor of shape {shape:?}")]
    Pooling { mode: String, shape: Vec<usize> },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric or undefined result.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Container(_) | Error::Label(_) | Error::Align(_) | Error::Io { .. } => 2,
            Error::Json(_) => 2,
            Error::Analysis(e) => match e {
                AnalysisError::Undefined(_)
                | AnalysisError::NonFinite { .. }
                | AnalysisError::EmptySelection(_) => 3,
                AnalysisError::InvalidArgument(_) => 1,
                _ => 2,
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
