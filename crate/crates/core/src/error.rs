use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("grid mismatch: {left} vs {right} points")]
    GridMismatch { left: usize, right: usize },

    #[error("cannot coarsen from {from} to {to} points")]
    UnsupportedCoarsen { from: usize, to: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solution blew up at t = {t_last_valid} (sup-norm above {bound})")]
    BlowUp { t_last_valid: f64, bound: f64 },

    #[error("blow-up at Poincaré iterate {iterate} (t = {t_last_valid})")]
    BlowUpAtIterate { iterate: usize, t_last_valid: f64 },

    #[error("zero number undefined for a function with sup-norm {sup_norm:e}")]
    DegenerateFunction { sup_norm: f64 },

    #[error("degenerate sample at t = {time}")]
    DegenerateSample { time: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("fixed point is not hyperbolic: |mu| - 1 = {distance:e}")]
    NonHyperbolic { distance: f64 },

    #[error("spectrum unresolved: {0}")]
    Unresolved(String),

    #[error("spectral gap violated: eigenvalue modulus {modulus} within {tol:e} of {threshold}")]
    GapViolation { modulus: f64, threshold: f64, tol: f64 },

    #[error("degenerate sequence: {0}")]
    Degenerate(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("rate {rate} falls in an ambiguity band between ladder entries")]
    Unclassifiable { rate: f64 },

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
