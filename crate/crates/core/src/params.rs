use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the acyclicity constraint is folded into the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    /// Quadratic penalty `ρ/2·h²`.
    #[default]
    Qpm,
    /// Augmented Lagrangian `ρ/2·h² + α·h`.
    Alm,
}

/// Regularization weights, pruning threshold, penalty schedule, and solver
/// tolerances for structure learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Adaptive L1 weight on the effect matrix.
    pub lambda1: f64,
    /// L2 weight on the effect matrix.
    pub lambda2: f64,
    /// Adaptive L1 weight on the transformation matrix (multi-domain only).
    pub lambda3: f64,
    /// Effects with magnitude below this are pruned after fitting.
    pub threshold_eps: f64,
    pub rho_init: f64,
    pub rho_mult: f64,
    pub rho_max: f64,
    /// The penalty loop stops once `h(B)` drops below this.
    pub h_tol: f64,
    /// Inner solver stops when the largest gradient entry is below this.
    pub solver_tol: f64,
    /// Inner solver also stops on a relative objective decrease below this.
    pub solver_ftol: f64,
    /// Iteration cap for each inner solve.
    pub solver_max_iter: usize,
    pub max_outer: usize,
    pub max_alt: usize,
    /// Smoothing constant for every `|·|` in the objective.
    pub smooth_delta: f64,
    pub seed: u64,
    pub penalty_mode: PenaltyMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 0.1,
            threshold_eps: 0.3,
            rho_init: 1.0,
            rho_mult: 10.0,
            rho_max: 1e16,
            h_tol: 1e-8,
            solver_tol: 1e-6,
            solver_ftol: 1e-10,
            solver_max_iter: 1000,
            max_outer: 100,
            max_alt: 50,
            smooth_delta: 1e-8,
            seed: 0,
            penalty_mode: PenaltyMode::Qpm,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("threshold_eps", self.threshold_eps),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        let positive = [
            ("rho_init", self.rho_init),
            ("rho_mult", self.rho_mult),
            ("rho_max", self.rho_max),
            ("h_tol", self.h_tol),
            ("solver_tol", self.solver_tol),
            ("smooth_delta", self.smooth_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.solver_ftol >= 0.0) {
            return Err(Error::InvalidInput("solver_ftol must be >= 0".into()));
        }
        if self.rho_mult <= 1.0 {
            return Err(Error::InvalidInput(format!("rho_mult must exceed 1, got {}", self.rho_mult)));
        }
        if self.rho_init > self.rho_max {
            return Err(Error::InvalidInput("rho_init exceeds rho_max".into()));
        }
        if self.max_outer == 0 || self.max_alt == 0 || self.solver_max_iter == 0 {
            return Err(Error::InvalidInput("iteration caps must be positive".into()));
        }
        Ok(())
    }
}
