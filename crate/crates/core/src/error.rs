use alloc::string::String;

/// Errors raised by the kernel toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("supervised set is empty")]
    EmptySupervision,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel is singular or not positive definite: {0}")]
    SingularKernel(String),
    #[error("prior kernel diverged at hidden time {time}")]
    DivergentPrior { time: usize },
    #[error("no root in the bracketing interval")]
    NoRoot,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("maximum number of iterations ({0}) reached")]
    MaxIterations(usize),
    #[error("trust region collapsed before convergence")]
    LineSearchFailure,
    #[error("importance weights degenerate (effective sample size {ess:.1})")]
    DegenerateTilt { ess: f64 },
    #[error("residual did not decrease over a window of {window} iterations")]
    NonDecreasingResidual { window: usize },
    #[error("numeric overflow: {0}")]
    NumericOverflow(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

pub type Result<T> = core::result::Result<T, Error>;
