use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    NotPositiveDefinite { eigenvalue: f64, largest: f64 },

    #[error("negative Hessian is not positive definite; eigenvalues {eigenvalues:?}")]
    IndefiniteHessian { eigenvalues: Vec<f64> },

    #[error("matrix is too ill-conditioned to invert: condition number estimate {condition:e}")]
    IllConditioned { condition: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("need at least {required} rows, found {found}")]
    TooFewRows { required: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite function value {value} at point {point:?}")]
    NonFinite { value: f64, point: Vec<f64> },

    #[error("cholesky factorization failed at pivot {pivot} (value {value:e})")]
    Cholesky { pivot: usize, value: f64 },

    #[error("model does not provide capability `{0}`")]
    UnsupportedCapability(&'static str),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("sampler diagnostic: {0}")]
    Sampler(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
