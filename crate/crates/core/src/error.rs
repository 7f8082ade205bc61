use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dataset `{name}`; valid datasets: {valid}")]
    UnknownDataset { name: String, valid: String },

    #[error("dataset `{0}` has no discrete mode structure (mode assignment needs ring6 or pinwheel)")]
    NoModes(String),

    #[error("unknown coupling `{name}`; valid couplings: {valid}")]
    UnknownCoupling { name: String, valid: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pool size mismatch ({left} vs {right}): {reason}")]
    SizeMismatch {
        left: usize,
        right: usize,
        reason: &'static str,
    },

    #[error("component covariances are singular: shared noise is {0} with rank r < d")]
    SingularCovariance(f64),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("non-finite training loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("malformed point-cloud file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
