//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state diverged (non-finite) at step {step}, t = {t}")]
    Divergence { step: usize, t: f64 },

    #[error("inverse jump map did not converge in {iters} Newton iterations at t = {t} (residual {residual:.3e})")]
    NoInverse { t: f64, iters: usize, residual: f64 },

    #[error("jump map near-singular at t = {t}: |det(I + dg/dx)| = {det:.3e}")]
    SingularMap { t: f64, det: f64 },

    #[error("wrong coefficient-builder variant: {0}")]
    WrongVariant(String),

    #[error("time step {given:.3e} violates the CFL bound; required dt <= {required:.3e}")]
    CflViolation { given: f64, required: f64 },

    #[error("solver instability: {0}")]
    Instability(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
