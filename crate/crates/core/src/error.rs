use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("size mismatch: {what} (expected {expected}, got {got})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Iterative solve stopped at `max_iter`. Carries the best iterate seen.
    #[error("CG did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("adaptive quadrature did not reach tolerance (estimate {estimate:.6e}, error {error:.3e})")]
    Quadrature { estimate: f64, error: f64 },

    /// An optimization run stopped because a state solve failed.
    #[error("optimization stopped: {0}")]
    Optimization(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class name, used for CLI exit messages.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Domain(_) => "domain",
            Error::Unsupported(_) => "unsupported",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::NonConvergence { .. } => "non-convergence",
            Error::Quadrature { .. } => "quadrature",
            Error::Optimization(_) => "optimization",
            Error::Config(_) => "config",
            Error::Cache(_) => "cache",
            Error::Io(_) => "io",
        }
    }
}
