use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("point {point:?} lies outside the domain")]
    Domain { point: Vec<f64> },

    #[error("integrand evaluated to {value} at node {node:?}")]
    Evaluation { node: Vec<f64>, value: f64 },

    #[error("function is not differentiable: {0}")]
    NotDifferentiable(String),

    #[error("kernel Gram matrix could not be factorized (jitter reached {jitter:e})")]
    IllConditionedKernel { jitter: f64 },

    #[error("invalid noise model: {0}")]
    InvalidModel(String),

    #[error("quadrature did not reach tolerance {requested:e} (achieved {achieved:e})")]
    Accuracy { achieved: f64, requested: f64 },

    #[error("sampler failure: {0}")]
    SamplerFailure(String),

    #[error("y-grid too narrow: captured predictive mass {mass}")]
    GridTooNarrow { mass: f64 },

    #[error("y-grid too coarse: quadrature mass {mass} (raise predictive.points)")]
    GridTooCoarse { mass: f64 },

    #[error("invalid configuration: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<crate::config::ConfigIssue>),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
