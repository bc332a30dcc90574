use thiserror::Error;

/// Errors produced by construction and by the unfolding operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnfoldError {
    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("histogram has zero total content")]
    EmptyHistogram,
    #[error("bin index {index} out of range for {n_bins} bins")]
    IndexOutOfRange { index: usize, n_bins: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("response matrix is identically zero")]
    ZeroResponse,
    #[error("smoothing width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("auxiliary order M={m} must exceed N={n}")]
    BadOrder { m: usize, n: usize },
    #[error("negative counts in bin {0}")]
    NegativeCounts(usize),
    #[error("response-variant systematic bound requires an L2-norm estimate of the unknown pdf")]
    MissingNormEstimate,
    #[error("replica count {0} below minimum of 1000")]
    BadReplicaCount(usize),
    #[error("bad toy parameters: {0}")]
    BadParams(String),
    #[error("iteration trace too short: {0}")]
    InsufficientTrace(String),
    #[error("problem size {size} exceeds oracle cap {cap}")]
    TooLarge { size: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, UnfoldError>;
