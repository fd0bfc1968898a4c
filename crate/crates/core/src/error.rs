use thiserror::Error;

/// Errors raised by the optimizer, the surrogate model and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not PSD (eigenvalue {eigenvalue:e}, largest {largest:e})")]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("covariance is singular")]
    SingularCovariance,

    #[error("kernel matrix not PD after maximum jitter")]
    KernelNotPd,

    #[error("duplicate training input at rows {0} and {1} with zero noise")]
    DuplicateInput(usize, usize),

    #[error("negative posterior variance {0:e}")]
    NegativeVariance(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("epsilon too tight: accepted {accepted} of {drawn} draws (rate {rate:e})")]
    EpsilonTooTight { accepted: usize, drawn: usize, rate: f64 },

    #[error("NaN in criterion values")]
    NanCriterion,

    #[error("empty history")]
    EmptyHistory,

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
