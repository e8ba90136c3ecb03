use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The simulator or a rollout produced a non-finite value.
    #[error("simulator divergence: {0}")]
    Divergence(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be positive definite was not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Not enough samples for the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A non-finite cost derivative was produced at the given time step.
    #[error("non-finite cost derivative at step {step}")]
    NonFiniteDerivative { step: usize },

    /// Forward moment propagation exceeded the covariance bound.
    #[error("covariance blow-up at step {step} (max entry {magnitude:e}); gains are unstable")]
    CovarianceBlowUp { step: usize, magnitude: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
