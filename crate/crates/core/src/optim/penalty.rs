//! Outer loop turning the acyclicity-constrained problem into a sequence of
//! unconstrained ones.

use nalgebra::{DMatrix, DVector};

use super::acyclic::acyclicity_with_grad;
use super::lbfgs::{minimize_unconstrained, SolverOptions, SolverStatus};
use super::ObjectiveEvaluation;
use crate::error::{Error, Result};
use crate::params::{Hyperparams, PenaltyMode};

/// Required shrink factor of `h` between outer rounds before `ρ` is raised.
const PROGRESS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyState {
    pub rho: f64,
    /// Lagrange multiplier; stays 0 in QPM mode.
    pub alpha: f64,
    pub h_value: f64,
    pub outer_iter: usize,
}

impl PenaltyState {
    pub fn initial(hp: &Hyperparams) -> Self {
        Self {
            rho: hp.rho_init,
            alpha: 0.0,
            h_value: f64::INFINITY,
            outer_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltyTraceEntry {
    pub outer_iter: usize,
    pub rho: f64,
    pub alpha: f64,
    pub h: f64,
    /// Score `F(B)` without the penalty terms.
    pub score: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PenaltyOutcome {
    pub b: DMatrix<f64>,
    pub state: PenaltyState,
    /// `h(B) < h_tol` at exit.
    pub converged: bool,
    pub line_search_failures: usize,
    pub trace: Vec<PenaltyTraceEntry>,
}

impl PenaltyOutcome {
    pub fn score(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.score)
    }
}

/// Off-diagonal positions of a `q × q` matrix in column-major order.
pub(crate) fn offdiag_indices(q: usize) -> Vec<usize> {
    (0..q * q).filter(|&k| k % q != k / q).collect()
}

pub(crate) fn pack_offdiag(b: &DMatrix<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&k| b[k]))
}

pub(crate) fn unpack_offdiag(x: &DVector<f64>, q: usize, idx: &[usize]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(q, q);
    for (v, &k) in x.iter().zip(idx) {
        b[k] = *v;
    }
    b
}

/// Minimizes `score(B)` subject to `h(B) = 0` over the off-diagonal entries of
/// `B`, starting from `b0`. The diagonal of `b0` is ignored.
///
/// `score` returns the value and the gradient over all `q²` entries in
/// column-major order.
pub fn penalty_loop<F>(score: F, hp: &Hyperparams, b0: &DMatrix<f64>) -> Result<PenaltyOutcome>
where
    F: FnMut(&DMatrix<f64>) -> ObjectiveEvaluation,
{
    penalty_loop_from(score, hp, b0, PenaltyState::initial(hp))
}

/// As [`penalty_loop`], resuming from an earlier `state` (ρ, α, last `h`).
pub fn penalty_loop_from<F>(mut score: F, hp: &Hyperparams, b0: &DMatrix<f64>, state: PenaltyState) -> Result<PenaltyOutcome>
where
    F: FnMut(&DMatrix<f64>) -> ObjectiveEvaluation,
{
    let q = b0.nrows();
    if b0.ncols() != q {
        return Err(Error::DimensionMismatch(format!("B must be square, got {}x{}", q, b0.ncols())));
    }
    if b0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial B must be finite".into()));
    }
    let idx = offdiag_indices(q);
    let opts = SolverOptions {
        tol: hp.solver_tol,
        ftol: hp.solver_ftol,
        max_iter: hp.solver_max_iter,
        ..Default::default()
    };

    let mut x = pack_offdiag(b0, &idx);
    let mut state = state;
    let mut h_prev = match acyclicity_with_grad(&unpack_offdiag(&x, q, &idx)) {
        Ok((h, _)) => h,
        Err(_) => f64::INFINITY,
    };
    if state.h_value.is_finite() {
        h_prev = h_prev.max(state.h_value);
    }
    let mut trace = Vec::new();
    let mut failures = 0;
    let mut last_h = h_prev;

    for _ in 0..hp.max_outer {
        let (rho, alpha) = (state.rho, state.alpha);
        let mode = hp.penalty_mode;
        let objective = |v: &DVector<f64>| {
            let b = unpack_offdiag(v, q, &idx);
            let Ok((h, gh)) = acyclicity_with_grad(&b) else {
                return ObjectiveEvaluation::new(f64::INFINITY, DVector::zeros(v.len()));
            };
            let f = score(&b);
            let mut coef = rho * h;
            let mut value = f.value + 0.5 * rho * h * h;
            if mode == PenaltyMode::Alm {
                coef += alpha;
                value += alpha * h;
            }
            let grad = DVector::from_iterator(idx.len(), idx.iter().map(|&k| f.gradient[k] + coef * gh[k]));
            ObjectiveEvaluation::new(value, grad)
        };
        let res = minimize_unconstrained(objective, x.clone(), &opts)?;
        if res.status == SolverStatus::LineSearchFailure {
            failures += 1;
        }
        x = res.x;
        let b = unpack_offdiag(&x, q, &idx);
        let h = acyclicity_with_grad(&b)?.0;
        let last_score = score(&b).value;
        state.outer_iter += 1;
        state.h_value = h;
        trace.push(PenaltyTraceEntry {
            outer_iter: state.outer_iter,
            rho,
            alpha,
            h,
            score: last_score,
            inner_iterations: res.iterations,
        });
        last_h = h;
        if h < hp.h_tol {
            break;
        }
        if mode == PenaltyMode::Alm {
            state.alpha += state.rho * h;
        }
        if h > PROGRESS * h_prev {
            state.rho *= hp.rho_mult;
        }
        h_prev = h;
        if state.rho > hp.rho_max {
            state.rho = hp.rho_max;
            break;
        }
    }

    Ok(PenaltyOutcome {
        b: unpack_offdiag(&x, q, &idx),
        converged: last_h < hp.h_tol,
        state,
        line_search_failures: failures,
        trace,
    })
}
