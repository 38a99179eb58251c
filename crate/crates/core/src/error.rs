use thiserror::Error;

/// Errors raised by the kernels, problems, solvers and update rules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RidgeError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("size guard exceeded: dimension {dim} > {limit}")]
    Size { dim: usize, limit: usize },

    #[error("matrix is singular within tolerance (smallest pivot {pivot:e})")]
    Singular { pivot: f64 },

    #[error("eigenvalue iteration failed to converge: {0}")]
    NoConvergence(String),

    #[error("invalid problem spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("conjugate gradient diverged after {iters} iterations (operator not positive definite?)")]
    CgDivergence { iters: usize },

    #[error("point is not a fixed point of the rule (step norm {step_norm:e})")]
    NotFixedPoint { step_norm: f64 },

    #[error("rate estimate unavailable: {0}")]
    EstimateUnavailable(String),

    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },
}

pub type Result<T> = std::result::Result<T, RidgeError>;
