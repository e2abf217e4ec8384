use thiserror::Error;

/// Errors raised by the numerical kernels, block evaluation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("matrix is not symmetric (max |s - s^T| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    Convergence { sweeps: usize, off_norm: f64 },
    #[error("kernel-domain error: affinity entry ({row}, {col}) = {value:e} is negative; use the exp_dot kernel or shift the affinities")]
    KernelDomain { row: usize, col: usize, value: f64 },
    #[error("degenerate vertex {vertex}: degree {degree:e} is not positive")]
    DegenerateVertex { vertex: usize, degree: f64 },
    #[error("affinity exponent {exponent:e} exceeds the overflow limit {limit:e}")]
    Overflow { exponent: f64, limit: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("filter spec error: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("gradient check failed for {0}")]
    GradientCheck(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
