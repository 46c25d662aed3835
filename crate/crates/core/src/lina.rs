//! Single-domain structure learning among latent factors: the Laplace
//! log-likelihood over factor scores, adaptive sparsity weights, the
//! penalized score, and the constrained fit with threshold pruning.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{flatten, left_pinv, topological_order};
use crate::measurement::{MeasurementModel, RANK_TOL};
use crate::optim::{
    laplace_logpdf_with_grad, minimize_unconstrained, penalty_loop, smooth_abs, ObjectiveEvaluation, PenaltyOutcome,
    PenaltyTraceEntry, SolverOptions,
};
use crate::params::Hyperparams;

/// Lower bound on `|b̂_ij|` when forming adaptive weights.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Penalty weights `w_ij = 1 / max(|b̂_ij|, floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    pub w: DMatrix<f64>,
}

impl AdaptiveWeights {
    pub fn from_estimate(b_hat: &DMatrix<f64>) -> Self {
        Self {
            w: b_hat.map(|b| 1.0 / b.abs().max(WEIGHT_FLOOR)),
        }
    }

    pub fn ones(q: usize) -> Self {
        Self {
            w: DMatrix::from_element(q, q, 1.0),
        }
    }
}

/// Diagnostics of one constrained fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitReport {
    /// `h` of the unpruned matrix dropped below `h_tol`.
    pub converged: bool,
    pub h: f64,
    pub rho: f64,
    pub alpha: f64,
    pub outer_iterations: usize,
    pub line_search_failures: usize,
    /// Edges removed after pruning to restore a topological order.
    pub cycles_broken: usize,
    pub trace: Vec<PenaltyTraceEntry>,
}

impl FitReport {
    pub(crate) fn from_outcome(out: &PenaltyOutcome, cycles_broken: usize) -> Self {
        Self {
            converged: out.converged,
            h: out.state.h_value,
            rho: out.state.rho,
            alpha: out.state.alpha,
            outer_iterations: out.state.outer_iter,
            line_search_failures: out.line_search_failures,
            cycles_broken,
            trace: out.trace.clone(),
        }
    }

    /// No warning flags were raised.
    pub fn is_clean(&self) -> bool {
        self.converged && self.line_search_failures == 0 && self.cycles_broken == 0
    }
}

/// Fitted effects among latent factors; `b[(i, j)]` is the effect of `f_j` on `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureModel {
    pub b: DMatrix<f64>,
    pub pruned_b: DMatrix<f64>,
    pub factor_names: Vec<String>,
    pub weights: AdaptiveWeights,
    pub report: FitReport,
}

/// Factor scores and the constant measurement term of the log-likelihood.
#[derive(Debug, Clone)]
pub struct LinaData {
    scores: DMatrix<f64>,
    reconstruction: f64,
}

impl LinaData {
    /// Projects `x` onto the factors of `model` and caches the
    /// `Ψ⁻¹`-weighted residual of that projection.
    pub fn new(model: &MeasurementModel, x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() != model.p() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} variables, loadings have {} rows",
                x.nrows(),
                model.p()
            )));
        }
        let g = model.loadings();
        let (pinv, _) = left_pinv(g, RANK_TOL).ok_or(Error::RankDeficientLoadings)?;
        let scores = &pinv * x;
        let reconstruction = reconstruction_term(g, model.error_variances(), x)?;
        Ok(Self { scores, reconstruction })
    }

    /// Uses precomputed scores with a zero measurement term.
    pub fn from_scores(scores: DMatrix<f64>) -> Self {
        Self {
            scores,
            reconstruction: 0.0,
        }
    }

    pub(crate) fn with_reconstruction(scores: DMatrix<f64>, reconstruction: f64) -> Self {
        Self { scores, reconstruction }
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn reconstruction(&self) -> f64 {
        self.reconstruction
    }

    pub fn q(&self) -> usize {
        self.scores.nrows()
    }

    /// Negative log-likelihood and its gradient over all `q²` entries of `B`
    /// (column-major; diagonal entries get zero gradient).
    pub fn neg_log_likelihood(&self, b: &DMatrix<f64>, delta: f64) -> Result<(f64, DMatrix<f64>)> {
        let (value, grad) = self.density_terms(b, delta)?;
        Ok((self.reconstruction + value, grad))
    }

    /// The likelihood without the measurement constant. The constant can be
    /// large, so it is added once at the end rather than accumulated into.
    fn density_terms(&self, b: &DMatrix<f64>, delta: f64) -> Result<(f64, DMatrix<f64>)> {
        let q = self.q();
        if b.shape() != (q, q) {
            return Err(Error::DimensionMismatch(format!("B is {:?}, expected {q}x{q}", b.shape())));
        }
        let mut bz = b.clone();
        bz.fill_diagonal(0.0);
        let resid = &self.scores - &bz * &self.scores;
        let mut value = 0.0;
        let mut d = DMatrix::zeros(q, resid.ncols());
        for (k, r) in resid.iter().enumerate() {
            let (lp, dlp) = laplace_logpdf_with_grad(*r, delta);
            value -= lp;
            d[k] = dlp;
        }
        // ∂/∂B of −Σ log p(f_i − b_iᵀf) = (∂ log p) fᵀ
        let mut grad = d * self.scores.transpose();
        grad.fill_diagonal(0.0);
        Ok((value, grad))
    }

    /// Penalized score `−L + λ1 Σ w_ij |b_ij| + λ2 Σ b_ij²` over off-diagonal entries.
    pub fn score(&self, b: &DMatrix<f64>, weights: &AdaptiveWeights, hp: &Hyperparams) -> Result<ObjectiveEvaluation> {
        let (mut value, mut grad) = self.density_terms(b, hp.smooth_delta)?;
        let q = self.q();
        for j in 0..q {
            for i in 0..q {
                if i == j {
                    continue;
                }
                let v = b[(i, j)];
                let (a, da) = smooth_abs(v, hp.smooth_delta);
                let w = weights.w[(i, j)];
                value += hp.lambda1 * w * a + hp.lambda2 * v * v;
                grad[(i, j)] += hp.lambda1 * w * da + 2.0 * hp.lambda2 * v;
            }
        }
        Ok(ObjectiveEvaluation::new(self.reconstruction + value, flatten(&grad)))
    }

    /// Unpenalized, unconstrained maximum-likelihood pre-fit from `B = 0`.
    pub fn unpenalized_estimate(&self, hp: &Hyperparams) -> Result<DMatrix<f64>> {
        if self.reconstruction != 0.0 {
            return Self::from_scores(self.scores.clone()).unpenalized_estimate(hp);
        }
        let q = self.q();
        let idx = crate::optim::penalty::offdiag_indices(q);
        let opts = SolverOptions {
            tol: hp.solver_tol,
            ftol: hp.solver_ftol,
            max_iter: hp.solver_max_iter,
            ..Default::default()
        };
        let objective = |x: &DVector<f64>| {
            let b = crate::optim::penalty::unpack_offdiag(x, q, &idx);
            match self.neg_log_likelihood(&b, hp.smooth_delta) {
                Ok((v, g)) => ObjectiveEvaluation::new(v, crate::optim::penalty::pack_offdiag(&g, &idx)),
                Err(_) => ObjectiveEvaluation::new(f64::NAN, DVector::zeros(x.len())),
            }
        };
        let res = minimize_unconstrained(objective, DVector::zeros(idx.len()), &opts)?;
        Ok(crate::optim::penalty::unpack_offdiag(&res.x, q, &idx))
    }

    pub fn adaptive_weights(&self, hp: &Hyperparams) -> Result<AdaptiveWeights> {
        Ok(AdaptiveWeights::from_estimate(&self.unpenalized_estimate(hp)?))
    }

    /// Constrained fit from `B = 0` followed by pruning at `hp.threshold_eps`.
    /// The measurement term is dropped while optimizing, so solver tolerances
    /// see only the part of the score that depends on `B`.
    pub fn fit(&self, hp: &Hyperparams, factor_names: Vec<String>) -> Result<StructureModel> {
        if self.reconstruction != 0.0 {
            return Self::from_scores(self.scores.clone()).fit(hp, factor_names);
        }
        hp.validate()?;
        let q = self.q();
        if factor_names.len() != q {
            return Err(Error::DimensionMismatch(format!("{} names for {q} factors", factor_names.len())));
        }
        let weights = self.adaptive_weights(hp)?;
        let out = penalty_loop(
            |b| {
                self.score(b, &weights, hp)
                    .unwrap_or_else(|_| ObjectiveEvaluation::new(f64::NAN, DVector::zeros(q * q)))
            },
            hp,
            &DMatrix::zeros(q, q),
        )?;
        let (pruned_b, broken) = break_cycles(prune(&out.b, hp.threshold_eps));
        Ok(StructureModel {
            report: FitReport::from_outcome(&out, broken),
            b: out.b,
            pruned_b,
            factor_names,
            weights,
        })
    }
}

/// `½ Σ_t ‖X(t) − G(GᵀG)⁻¹GᵀX(t)‖²` weighted by `Ψ⁻¹`; constant in `B`.
pub fn reconstruction_term(g: &DMatrix<f64>, psi: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    if g.nrows() != x.nrows() || psi.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "loadings {:?}, {} error variances, data {:?}",
            g.shape(),
            psi.len(),
            x.shape()
        )));
    }
    let (pinv, _) = left_pinv(g, RANK_TOL).ok_or(Error::RankDeficientLoadings)?;
    let resid = x - g * (pinv * x);
    let mut total = 0.0;
    for t in 0..resid.ncols() {
        for i in 0..resid.nrows() {
            total += resid[(i, t)].powi(2) / psi[i];
        }
    }
    Ok(0.5 * total)
}

/// `−L(B, Ĝ)` for data `x` under `model`.
pub fn neg_log_likelihood(b: &DMatrix<f64>, model: &MeasurementModel, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    LinaData::new(model, x)?.neg_log_likelihood(b, crate::optim::SMOOTH_DELTA)
}

pub fn adaptive_weights(model: &MeasurementModel, x: &DMatrix<f64>, hp: &Hyperparams) -> Result<AdaptiveWeights> {
    LinaData::new(model, x)?.adaptive_weights(hp)
}

pub fn score_f(
    b: &DMatrix<f64>,
    model: &MeasurementModel,
    x: &DMatrix<f64>,
    weights: &AdaptiveWeights,
    hp: &Hyperparams,
) -> Result<ObjectiveEvaluation> {
    LinaData::new(model, x)?.score(b, weights, hp)
}

pub fn fit_structure(model: &MeasurementModel, x: &DMatrix<f64>, hp: &Hyperparams) -> Result<StructureModel> {
    LinaData::new(model, x)?.fit(hp, model.clusters().names().to_vec())
}

/// Zeroes entries with `|b_ij| < eps`.
pub fn prune(b: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    b.map(|v| if v.abs() < eps { 0.0 } else { v })
}

/// Removes the weakest edge until the support admits a topological order.
/// Returns the matrix and the number of edges removed.
pub fn break_cycles(mut b: DMatrix<f64>) -> (DMatrix<f64>, usize) {
    b.fill_diagonal(0.0);
    let mut removed = 0;
    while topological_order(&b).is_none() {
        let mut weakest = (f64::INFINITY, 0usize);
        for (k, v) in b.iter().enumerate() {
            if *v != 0.0 && v.abs() < weakest.0 {
                weakest = (v.abs(), k);
            }
        }
        b[weakest.1] = 0.0;
        removed += 1;
    }
    (b, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{acyclicity_h, laplace_logpdf};
    use crate::triad::ClusterSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> (MeasurementModel, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_row_slice(4, 2, &[0.8, 0., 0.6, 0., 0., 0.7, 0., -0.5]);
        let psi = DVector::from_vec(vec![0.3, 0.5, 0.4, 0.6]);
        let clusters = ClusterSpec::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let model = MeasurementModel::uncorrelated(g, psi, clusters).unwrap();
        let x = DMatrix::from_fn(4, 50, |_, _| rng.random_range(-2.0..2.0));
        (model, x)
    }

    #[test]
    fn prune_threshold() {
        let b = DMatrix::from_row_slice(2, 2, &[0., 0.29, -0.31, 0.]);
        let p = prune(&b, 0.3);
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(1, 0)], -0.31);
        assert_eq!(prune(&DMatrix::from_row_slice(2, 2, &[0., 0.31, 0.29, 0.]), 0.3)[(0, 1)], 0.31);
        assert_eq!(prune(&b, 0.0), b);
        assert_eq!(prune(&DMatrix::zeros(3, 3), 0.3), DMatrix::zeros(3, 3));
    }

    #[test]
    fn weights_floor() {
        let w = AdaptiveWeights::from_estimate(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(w.w[(0, 0)], 1.0);
        assert_eq!(w.w[(0, 1)], 1000.0);
    }

    #[test]
    fn square_loadings_have_no_reconstruction_term() {
        let g = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(2, 30, |_, _| rng.random_range(-1.0..1.0));
        let psi = DVector::from_vec(vec![0.5, 0.25]);
        assert!(reconstruction_term(&g, &psi, &x).unwrap() < 1e-20);
    }

    #[test]
    fn likelihood_matches_direct_summation() {
        let (model, x) = toy(7);
        let b = DMatrix::from_row_slice(2, 2, &[0., 0.4, -0.7, 0.]);
        let (value, _) = neg_log_likelihood(&b, &model, &x).unwrap();

        let g = model.loadings();
        let gtg_inv = (g.transpose() * g).try_inverse().unwrap();
        let gt = &gtg_inv * g.transpose();
        let mut direct = 0.0;
        for t in 0..x.ncols() {
            let xt = x.column(t).into_owned();
            let f = &gt * &xt;
            let r = &xt - g * &f;
            for i in 0..4 {
                direct += 0.5 * r[i] * r[i] / model.error_variances()[i];
            }
            for i in 0..2 {
                let gi: f64 = (0..4).map(|k| gt[(i, k)] * xt[k]).sum();
                let bi: f64 = (0..2).map(|j| b[(i, j)] * f[j]).sum();
                direct -= laplace_logpdf(gi - bi);
            }
        }
        assert!((value - direct).abs() < 1e-10 * direct.abs().max(1.0), "{value} vs {direct}");
    }

    #[test]
    fn score_collapses_without_penalties() {
        let (model, x) = toy(3);
        let hp = Hyperparams {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Default::default()
        };
        let z = DMatrix::zeros(2, 2);
        let s = score_f(&z, &model, &x, &AdaptiveWeights::ones(2), &hp).unwrap();
        let (nll, _) = neg_log_likelihood(&z, &model, &x).unwrap();
        assert_eq!(s.value, nll);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let (model, x) = toy(5);
        let data = LinaData::new(&model, &x).unwrap();
        let hp = Hyperparams::default();
        let w = AdaptiveWeights::from_estimate(&DMatrix::from_row_slice(2, 2, &[0., 0.5, 0.2, 0.]));
        let b = DMatrix::from_row_slice(2, 2, &[0., 0.35, -0.6, 0.]);
        let g = data.score(&b, &w, &hp).unwrap().gradient;
        for k in [1usize, 2] {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[k] += 1e-5;
            bm[k] -= 1e-5;
            let fd = (data.score(&bp, &w, &hp).unwrap().value - data.score(&bm, &w, &hp).unwrap().value) / 2e-5;
            assert!((fd - g[k]).abs() < 1e-4 * fd.abs().max(1.0), "{fd} vs {}", g[k]);
        }
        assert_eq!(g[0], 0.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn larger_l2_increases_score() {
        let (model, x) = toy(9);
        let data = LinaData::new(&model, &x).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[0., 0.3, 0., 0.]);
        let w = AdaptiveWeights::ones(2);
        let lo = data.score(&b, &w, &Hyperparams::default()).unwrap().value;
        let hi = data
            .score(&b, &w, &Hyperparams {
                lambda2: 0.5,
                ..Default::default()
            })
            .unwrap()
            .value;
        assert!(hi > lo);
    }

    #[test]
    fn break_cycles_drops_weakest_edge() {
        let b = DMatrix::from_row_slice(3, 3, &[0., 0., 0.4, 0.9, 0., 0., 0., 0.8, 0.]);
        let (fixed, removed) = break_cycles(b);
        assert_eq!(removed, 1);
        assert_eq!(fixed[(0, 2)], 0.0);
        assert!(topological_order(&fixed).is_some());
        assert!(acyclicity_h(&fixed).unwrap() < 1e-12);
    }
}
