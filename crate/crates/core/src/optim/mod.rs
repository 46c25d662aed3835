//! Numerical kernels for structure learning: the trace-exponential
//! acyclicity function, smoothed absolute value, Laplace log-density,
//! a limited-memory quasi-Newton solver, and the penalty outer loop.

mod acyclic;
mod expm;
mod lbfgs;
pub(crate) mod penalty;

pub use acyclic::{acyclicity_grad, acyclicity_h, acyclicity_with_grad, ENTRY_CAP};
pub use expm::expm;
pub use lbfgs::{minimize_unconstrained, SolverOptions, SolverResult, SolverStatus};
pub use penalty::{penalty_loop, penalty_loop_from, PenaltyOutcome, PenaltyState, PenaltyTraceEntry};

use nalgebra::DVector;

/// Default smoothing constant for `|·|`.
pub const SMOOTH_DELTA: f64 = 1e-8;

/// Objective value and gradient at one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
}

impl ObjectiveEvaluation {
    pub fn new(value: f64, gradient: DVector<f64>) -> Self {
        Self { value, gradient }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

/// `sqrt(u² + δ)` and its derivative.
#[inline]
pub fn smooth_abs(u: f64, delta: f64) -> (f64, f64) {
    let v = (u * u + delta).sqrt();
    (v, u / v)
}

/// Log-density of the unit-variance Laplace distribution up to an additive
/// constant, with `|u|` smoothed.
#[inline]
pub fn laplace_logpdf(u: f64) -> f64 {
    laplace_logpdf_with_grad(u, SMOOTH_DELTA).0
}

#[inline]
pub fn laplace_logpdf_with_grad(u: f64, delta: f64) -> (f64, f64) {
    let (a, da) = smooth_abs(u, delta);
    (-std::f64::consts::SQRT_2 * a, -std::f64::consts::SQRT_2 * da)
}
