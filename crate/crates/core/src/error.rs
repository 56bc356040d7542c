use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("mean-reversion matrix is singular or unstable: {0}")]
    UnstableNoise(String),

    #[error("covariance factorization failed: smallest eigenvalue {0:e} is negative")]
    Indefinite(f64),

    #[error("no barrier crossing between {prev} and {next} (barrier {barrier})")]
    NoCrossing { prev: f64, next: f64, barrier: f64 },

    #[error("step rejected: dt*|A|/eps^2 = {ratio:.3} exceeds {limit}")]
    StepTooLarge { ratio: f64, limit: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate scaling fit: {0}")]
    DegenerateFit(String),

    #[error("unstable finite-difference configuration: transport CFL {0:.3} > 1")]
    UnstableGrid(f64),

    #[error("{0}")]
    Unsupported(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eps = {eps}: {source}")]
    AtEpsilon {
        eps: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
