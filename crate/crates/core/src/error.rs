use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("quadrature grid too narrow: tail mass {tail_mass:e}, try half-width {suggested_half_width:.2}")]
    GridTooNarrow { tail_mass: f64, suggested_half_width: f64 },
    #[error("Fock truncation inadequate: tail population {tail_mass:e} at dim {dim}")]
    Truncation { dim: usize, tail_mass: f64 },
    #[error("steady-state solve failed ({reason}); the null space may be degenerate, try a larger chi")]
    SingularSteadyState { reason: String },
    #[error("steady-state residual {residual:e} exceeds {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("step size underflow at t = {t} (h = {h:e}); the problem looks stiff")]
    StepUnderflow { t: f64, h: f64 },
    #[error("{what} did not converge; estimates: {estimates:?}")]
    NoConvergence { what: &'static str, estimates: Vec<f64> },
    #[error("degenerate denominator: variance {variance:e}")]
    DegenerateVariance { variance: f64 },
    #[error("{0}")]
    Phase(&'static str),
    #[error("maximizer at bracket edge [{lo}, {hi}] after widening")]
    BracketEdge { lo: f64, hi: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
