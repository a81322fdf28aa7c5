use crate::trainer::TrainLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("distance {0:e} is too small to differentiate")]
    DegenerateDistance(f64),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("class {0} has a single sample, covariance is not estimable")]
    SingleSampleClass(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label {label} at line {line} is out of range for {classes} classes")]
    LabelOutOfRange { label: i64, line: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LDA learns at most c - 1 = {max} filters, {requested} requested")]
    RankBound { requested: usize, max: usize },

    #[error("line search found no improving step from the initial filters")]
    NoImprovingStep { log: Box<TrainLog> },

    #[error("training set has {train} samples, fewer than k = {k}")]
    TrainSmallerThanK { train: usize, k: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("unknown toy dataset `{0}` (expected one of: toy6d, toy4d, covcode)")]
    UnknownSpec(String),

    #[error("unknown sweep `{0}` (expected one of: bayes1d, bayes2d, co_gap_equalcov, co_gap_dataset)")]
    UnknownSweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
