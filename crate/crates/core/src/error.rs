use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy data: {0}")]
    Npy(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),

    #[error("row {row} is all zeros and cannot be {kind}-normalized")]
    DegenerateRow { row: usize, kind: &'static str },

    #[error("sample count {requested} out of range [{min}, {max}]")]
    SampleCountOutOfRange {
        requested: usize,
        min: usize,
        max: usize,
    },

    #[error("insufficient samples: need at least 2, got {0}")]
    InsufficientSamples(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("sample count mismatch: {0} vs {1}")]
    SampleCountMismatch(usize, usize),

    #[error("gram size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("median pairwise distance is zero; RBF bandwidth undefined")]
    ZeroMedian,

    #[error("rbf kernel needs a bandwidth (override or shared)")]
    MissingBandwidth,

    #[error("gram matrix is already centered")]
    AlreadyCentered,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("cannot aggregate fd results")]
    MixedMetrics,

    #[error("nothing to aggregate")]
    EmptyInput,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: i64, num_classes: usize },

    #[error("pool has {pool} samples, {requested} requested")]
    PoolTooSmall { requested: usize, pool: usize },

    #[error("sweep size {size} exceeds pool of {pool}")]
    SizeExceedsPool { size: usize, pool: usize },

    #[error("invalid sweep sizes: {0}")]
    InvalidSizes(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{metric} for ({extractor}, {layer}): {source}")]
    Cell {
        metric: String,
        extractor: String,
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True for failures of the arithmetic itself, as opposed to bad inputs or
    /// configuration. The CLI maps these to exit code 2.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure(_)
            | Error::NotSymmetric(_)
            | Error::ZeroMedian
            | Error::DegenerateInput(_) => true,
            Error::Cell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
