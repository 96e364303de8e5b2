use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate handle: {0}")]
    DegenerateHandle(String),

    #[error("parameter image is infinite under the Möbius map")]
    InfiniteImage,

    #[error("point did not reach the fundamental domain after {0} generator applications")]
    IterationCapExceeded(usize),

    #[error("evaluation at a pole: {0}")]
    PoleEvaluation(String),

    #[error("truncated system is numerically singular")]
    SingularSystem,

    #[error("multiplier {0} is not inside the unit disk")]
    MultiplierOutOfRange(f64),

    #[error("quadrature did not converge: residual {0:e}")]
    NonConvergent(f64),

    #[error("integration path passes within {0:e} of a pole")]
    PathThroughPole(f64),

    #[error("finite-difference levels disagree by {0:e}")]
    NonConvergentDerivative(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
