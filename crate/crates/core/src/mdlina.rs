//! Multi-domain structure learning: the transformation `H` from interest
//! factors to augmented factors, its reconstruction error, the joint score,
//! alternating optimization, hardening of `H`, and the final refit of `B̃`.

use nalgebra::{DMatrix, DVector};

use crate::data::AugmentedDataset;
use crate::error::{Error, Result};
use crate::lina::{AdaptiveWeights, FitReport, LinaData, StructureModel};
use crate::linalg::{flatten, left_pinv, sigma_min, unflatten};
use crate::measurement::{FactorScores, MeasurementModel};
use crate::optim::{
    laplace_logpdf_with_grad, minimize_unconstrained, penalty_loop_from, smooth_abs, ObjectiveEvaluation, PenaltyState,
    SolverOptions,
};
use crate::params::Hyperparams;

/// Smallest singular value below which `H` counts as rank deficient.
pub const H_RANK_TOL: f64 = 1e-10;
/// Relative change of the joint objective that ends the alternation.
pub const ALT_TOL: f64 = 1e-6;

/// `q × q̃` matrix with `f̄ = H f̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    h: DMatrix<f64>,
}

impl TransformMatrix {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        check_h(&h)?;
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> usize {
        self.h.nrows()
    }

    pub fn q_tilde(&self) -> usize {
        self.h.ncols()
    }
}

/// `H` with unit-norm columns, and the original norms.
pub fn normalize_columns(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let norms: Vec<f64> = h.column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|n| !(*n > H_RANK_TOL)) {
        return Err(Error::RankDeficientH);
    }
    let mut hn = h.clone();
    for (j, n) in norms.iter().enumerate() {
        hn.column_mut(j).unscale_mut(*n);
    }
    Ok((hn, norms))
}

fn check_h(h: &DMatrix<f64>) -> Result<()> {
    if h.ncols() == 0 || h.ncols() > h.nrows() {
        return Err(Error::DimensionMismatch(format!("H is {}x{}, need 1 <= q̃ <= q", h.nrows(), h.ncols())));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("H has non-finite entries".into()));
    }
    if sigma_min(h) <= H_RANK_TOL {
        return Err(Error::RankDeficientH);
    }
    Ok(())
}

/// One interest factor per augmented factor, with the weight kept from `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardAssignment {
    pub row_to_interest: Vec<usize>,
    pub weights: Vec<f64>,
    pub q_tilde: usize,
}

impl HardAssignment {
    pub fn new(row_to_interest: Vec<usize>, weights: Vec<f64>, q_tilde: usize) -> Result<Self> {
        if row_to_interest.len() != weights.len() {
            return Err(Error::DimensionMismatch("assignment and weights differ in length".into()));
        }
        if let Some(&c) = row_to_interest.iter().find(|&&c| c >= q_tilde) {
            return Err(Error::InvalidInput(format!("interest factor {} out of range", c + 1)));
        }
        for c in 0..q_tilde {
            if !row_to_interest.contains(&c) {
                return Err(Error::AssignmentInfeasible { column: c + 1 });
            }
        }
        Ok(Self {
            row_to_interest,
            weights,
            q_tilde,
        })
    }

    /// Each augmented factor goes to the interest factor with unit weight.
    pub fn indicator(row_to_interest: Vec<usize>, q_tilde: usize) -> Result<Self> {
        let w = vec![1.0; row_to_interest.len()];
        Self::new(row_to_interest, w, q_tilde)
    }

    /// Augmented factors represented by interest factor `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.row_to_interest.len()).filter(|&r| self.row_to_interest[r] == j).collect()
    }

    /// `H` with only the kept weights.
    pub fn h_hard(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.row_to_interest.len(), self.q_tilde);
        for (r, (&c, &w)) in self.row_to_interest.iter().zip(&self.weights).enumerate() {
            h[(r, c)] = w;
        }
        h
    }
}

/// Largest `q̃` for which [`MdProblem::harden`] repairs a block exactly.
pub const REPAIR_EXACT_MAX: usize = 16;

/// Column per row maximizing the total of `w` such that `min(k, q̃)` distinct
/// columns are used. Dynamic program over the set of columns already taken
/// by distinct rows; with `k ≥ q̃` a row may also take its best column freely.
fn full_rank_pattern(w: &DMatrix<f64>) -> Vec<usize> {
    let (k, qt) = w.shape();
    let tall = k >= qt;
    let states = 1usize << qt;
    let best_col: Vec<usize> = (0..k)
        .map(|i| (0..qt).fold(0, |b, c| if w[(i, c)] > w[(i, b)] { c } else { b }))
        .collect();
    let mut value = vec![f64::NEG_INFINITY; states];
    value[0] = 0.0;
    // choice[i][mask] = (previous mask, column) for row i
    let mut choice = vec![vec![(0usize, 0usize); states]; k];
    for i in 0..k {
        let mut next = vec![f64::NEG_INFINITY; states];
        for mask in 0..states {
            if value[mask] == f64::NEG_INFINITY {
                continue;
            }
            if tall {
                let v = value[mask] + w[(i, best_col[i])];
                if v > next[mask] {
                    next[mask] = v;
                    choice[i][mask] = (mask, best_col[i]);
                }
            }
            for c in (0..qt).filter(|c| mask >> c & 1 == 0) {
                let to = mask | 1 << c;
                let v = value[mask] + w[(i, c)];
                if v > next[to] {
                    next[to] = v;
                    choice[i][to] = (mask, c);
                }
            }
        }
        value = next;
    }
    let mut mask = if tall {
        states - 1
    } else {
        (0..states)
            .filter(|m| m.count_ones() as usize == k)
            .fold(None, |b: Option<usize>, m| match b {
                Some(b) if value[b] >= value[m] => Some(b),
                _ => Some(m),
            })
            .unwrap_or(0)
    };
    let mut out = vec![0; k];
    for i in (0..k).rev() {
        let (prev, c) = choice[i][mask];
        out[i] = c;
        mask = prev;
    }
    out
}

/// Each row keeps its largest-magnitude entry; ties go to the lower column.
pub fn harden_h(h: &TransformMatrix) -> Result<HardAssignment> {
    let m = h.matrix();
    let mut rows = Vec::with_capacity(m.nrows());
    let mut weights = Vec::with_capacity(m.nrows());
    for r in 0..m.nrows() {
        let mut best = 0;
        for c in 1..m.ncols() {
            if m[(r, c)].abs() > m[(r, best)].abs() {
                best = c;
            }
        }
        rows.push(best);
        weights.push(m[(r, best)]);
    }
    HardAssignment::new(rows, weights, m.ncols())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlternationEntry {
    pub round: usize,
    /// Joint score without the acyclicity and measurement terms.
    pub objective: f64,
    pub rho: f64,
    pub h_value: f64,
}

/// Result of a multi-domain fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MdStructureModel {
    /// Refit effects among interest factors under the hardened `H`.
    pub b_tilde: DMatrix<f64>,
    pub pruned_b_tilde: DMatrix<f64>,
    /// `B̃` at the end of the alternation, before hardening.
    pub b_tilde_joint: DMatrix<f64>,
    pub h: TransformMatrix,
    pub assignment: HardAssignment,
    pub interest_names: Vec<String>,
    pub augmented_names: Vec<String>,
    pub weights_b: AdaptiveWeights,
    pub weights_h: AdaptiveWeights,
    /// Diagnostics of the final refit.
    pub report: FitReport,
    pub alternation: Vec<AlternationEntry>,
    pub alternation_converged: bool,
}

/// `‖F̄ − P_H F̄‖²` with `P_H = H(HᵀH)⁻¹Hᵀ`, and its gradient in `H`.
pub fn reconstruction_error(h: &TransformMatrix, fbar: &FactorScores) -> Result<(f64, DMatrix<f64>)> {
    let f = &fbar.scores;
    if f.nrows() != h.q() {
        return Err(Error::DimensionMismatch(format!("F̄ has {} rows, H has {}", f.nrows(), h.q())));
    }
    let s = f * f.transpose();
    let proj = Projection::new(h.matrix())?;
    Ok((proj.residual(f), proj.residual_grad(&s)))
}

/// Least-squares map from factor scores to interest scores for one block of
/// `H`. Tall (or square) blocks use `(HᵀH)⁻¹Hᵀ`, wide ones `Hᵀ(HHᵀ)⁻¹`.
struct Projection {
    k: DMatrix<f64>,
    /// `(HᵀH)⁻¹` when tall, `(HHᵀ)⁻¹` when wide.
    a_inv: DMatrix<f64>,
    /// `I − HK` when tall, `I − KH` when wide.
    comp: DMatrix<f64>,
    tall: bool,
}

impl Projection {
    fn new(h: &DMatrix<f64>) -> Result<Self> {
        if sigma_min(h) <= H_RANK_TOL {
            return Err(Error::RankDeficientH);
        }
        if h.nrows() >= h.ncols() {
            let (k, a_inv) = left_pinv(h, 0.0).ok_or(Error::RankDeficientH)?;
            let comp = DMatrix::identity(h.nrows(), h.nrows()) - h * &k;
            Ok(Self { k, a_inv, comp, tall: true })
        } else {
            let a_inv = (h * h.transpose()).cholesky().ok_or(Error::RankDeficientH)?.inverse();
            let k = h.transpose() * &a_inv;
            let comp = DMatrix::identity(h.ncols(), h.ncols()) - &k * h;
            Ok(Self {
                k,
                a_inv,
                comp,
                tall: false,
            })
        }
    }

    /// `‖F − HKF‖²`; zero for wide blocks, whose columns span every factor.
    fn residual(&self, f: &DMatrix<f64>) -> f64 {
        if self.tall {
            (&self.comp * f).norm_squared()
        } else {
            0.0
        }
    }

    /// `∂/∂H ‖(I − P)F‖² = −2 (I − P) S Kᵀ` with `S = FFᵀ`.
    fn residual_grad(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        if self.tall {
            &self.comp * s * self.k.transpose() * -2.0
        } else {
            DMatrix::zeros(self.k.ncols(), self.k.nrows())
        }
    }

    /// Pulls `∂/∂K` back to `∂/∂H`.
    fn pullback(&self, gk: &DMatrix<f64>) -> DMatrix<f64> {
        let kt = self.k.transpose();
        if self.tall {
            &self.comp * gk.transpose() * &self.a_inv - &kt * gk * &kt
        } else {
            &self.a_inv * gk.transpose() * &self.comp - &kt * gk * &kt
        }
    }
}

/// Augmented factor scores split into per-domain blocks, plus the constant
/// measurement term.
///
/// Samples of domain `m` only carry values for the factors of domain `m`;
/// the remaining entries of the augmented scores are padding. Interest scores
/// and reconstruction errors are therefore formed per block from `H_m`, the
/// rows of `H` belonging to that domain. With a single block this is the
/// plain projection `(HᵀH)⁻¹Hᵀ F̄`.
#[derive(Debug, Clone)]
pub struct MdProblem {
    scores: DMatrix<f64>,
    reconstruction: f64,
    blocks: Vec<ScoreBlock>,
}

#[derive(Debug, Clone)]
struct ScoreBlock {
    rows: Vec<usize>,
    /// `(first column, number of columns)` in the augmented scores.
    cols: (usize, usize),
    scores: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl ScoreBlock {
    fn new(rows: Vec<usize>, cols: (usize, usize), all: &DMatrix<f64>) -> Self {
        let scores = all.select_rows(&rows).columns(cols.0, cols.1).into_owned();
        Self {
            rows,
            cols,
            gram: &scores * scores.transpose(),
            scores,
        }
    }

    fn scatter(&self, g: &DMatrix<f64>, into: &mut DMatrix<f64>) {
        for (k, &r) in self.rows.iter().enumerate() {
            let row = into.row(r) + g.row(k);
            into.set_row(r, &row);
        }
    }
}

/// Value and gradients of the joint score.
#[derive(Debug, Clone, PartialEq)]
pub struct MdEvaluation {
    pub value: f64,
    pub grad_b: DMatrix<f64>,
    pub grad_h: DMatrix<f64>,
}

impl MdProblem {
    /// Treats all factors and samples as one domain.
    pub fn new(model: &MeasurementModel, xbar: &DMatrix<f64>) -> Result<Self> {
        let lina = LinaData::new(model, xbar)?;
        let mut p = Self::from_scores(lina.scores().clone());
        p.reconstruction = lina.reconstruction();
        Ok(p)
    }

    /// Per-domain blocks of the augmented data.
    pub fn augmented(model: &MeasurementModel, aug: &AugmentedDataset) -> Result<Self> {
        let lina = LinaData::new(model, aug.data())?;
        let domains = factor_domains(model, aug)?;
        let cols: Vec<(usize, usize)> = (1..=aug.n_domains()).map(|m| aug.col_block(m)).collect();
        let mut p = Self::from_blocks(lina.scores().clone(), &domains, &cols)?;
        p.reconstruction = lina.reconstruction();
        Ok(p)
    }

    /// Scores with factor `r` in domain `domains[r]` (1-based) and the samples
    /// of domain `m` in columns `cols[m − 1]`, given as `(first, count)`.
    pub fn from_blocks(scores: DMatrix<f64>, domains: &[usize], cols: &[(usize, usize)]) -> Result<Self> {
        if domains.len() != scores.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} domain labels for {} factors",
                domains.len(),
                scores.nrows()
            )));
        }
        let mut blocks = Vec::with_capacity(cols.len());
        for (m, &c) in cols.iter().enumerate() {
            if c.0 + c.1 > scores.ncols() {
                return Err(Error::DimensionMismatch(format!("domain {} columns exceed the scores", m + 1)));
            }
            let rows: Vec<usize> = (0..domains.len()).filter(|&r| domains[r] == m + 1).collect();
            if rows.is_empty() {
                return Err(Error::InvalidInput(format!("domain {} has no factors", m + 1)));
            }
            blocks.push(ScoreBlock::new(rows, c, &scores));
        }
        if domains.iter().any(|&d| d == 0 || d > cols.len()) {
            return Err(Error::InvalidInput("domain labels must lie in 1..=M".into()));
        }
        Ok(Self {
            scores,
            reconstruction: 0.0,
            blocks,
        })
    }

    pub fn from_scores(scores: DMatrix<f64>) -> Self {
        let rows = (0..scores.nrows()).collect();
        Self {
            blocks: vec![ScoreBlock::new(rows, (0, scores.ncols()), &scores)],
            scores,
            reconstruction: 0.0,
        }
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn q(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_domains(&self) -> usize {
        self.blocks.len()
    }

    /// [`harden_h`] with every domain block of the hard `H` kept full rank.
    /// A block whose row maxima use fewer than `min(q_m, q̃)` distinct
    /// interest factors is reassigned to the valid pattern of largest total
    /// `|H|`, solved exactly for `q̃ ≤` [`REPAIR_EXACT_MAX`].
    pub fn harden(&self, h: &TransformMatrix) -> Result<HardAssignment> {
        let plain = harden_h(h)?;
        let m = h.matrix();
        let qt = m.ncols();
        let mut rows = plain.row_to_interest.clone();
        let mut weights = plain.weights.clone();
        for blk in &self.blocks {
            let k = blk.rows.len();
            let mut used: Vec<usize> = blk.rows.iter().map(|&r| rows[r]).collect();
            used.sort_unstable();
            used.dedup();
            if used.len() == k.min(qt) {
                continue;
            }
            if qt > REPAIR_EXACT_MAX {
                let column = (0..qt).find(|c| !used.contains(c)).unwrap_or(0);
                return Err(Error::AssignmentInfeasible { column: column + 1 });
            }
            let abs = DMatrix::from_fn(k, qt, |i, c| m[(blk.rows[i], c)].abs());
            for (i, c) in full_rank_pattern(&abs).into_iter().enumerate() {
                let r = blk.rows[i];
                rows[r] = c;
                weights[r] = m[(r, c)];
            }
        }
        HardAssignment::new(rows, weights, qt)
    }

    fn projections(&self, h: &DMatrix<f64>) -> Result<Vec<Projection>> {
        self.blocks.iter().map(|b| Projection::new(&h.select_rows(&b.rows))).collect()
    }

    fn interest_scores(&self, projs: &[Projection], q_tilde: usize) -> DMatrix<f64> {
        let mut ft = DMatrix::zeros(q_tilde, self.scores.ncols());
        for (b, p) in self.blocks.iter().zip(projs) {
            ft.columns_mut(b.cols.0, b.cols.1).copy_from(&(&p.k * &b.scores));
        }
        ft
    }

    /// Reconstruction error of `H` summed over domains, with its gradient.
    pub fn reconstruction_error(&self, h: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let projs = self.projections(h)?;
        Ok(self.reconstruction_with(&projs, h.shape()))
    }

    fn reconstruction_with(&self, projs: &[Projection], shape: (usize, usize)) -> (f64, DMatrix<f64>) {
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(shape.0, shape.1);
        for (b, p) in self.blocks.iter().zip(projs) {
            value += p.residual(&b.scores);
            b.scatter(&p.residual_grad(&b.gram), &mut grad);
        }
        (value, grad)
    }

    /// Interest-factor scores under `H` (columns normalized) as a
    /// single-domain problem.
    pub fn interest_data(&self, h: &DMatrix<f64>) -> Result<LinaData> {
        let hn = normalize_columns(h)?.0;
        let ft = self.interest_scores(&self.projections(&hn)?, h.ncols());
        Ok(LinaData::with_reconstruction(ft, self.reconstruction))
    }

    pub fn evaluate(
        &self,
        b: &DMatrix<f64>,
        h: &DMatrix<f64>,
        weights_b: &AdaptiveWeights,
        weights_h: &AdaptiveWeights,
        hp: &Hyperparams,
    ) -> Result<MdEvaluation> {
        let q = self.q();
        let qt = h.ncols();
        if h.nrows() != q || b.shape() != (qt, qt) {
            return Err(Error::DimensionMismatch(format!(
                "F̄ has {q} rows, H is {:?}, B̃ is {:?}",
                h.shape(),
                b.shape()
            )));
        }
        if weights_b.w.shape() != (qt, qt) || weights_h.w.shape() != h.shape() {
            return Err(Error::DimensionMismatch("penalty weights do not match B̃ or H".into()));
        }
        // the score sees H only through its unit-norm columns
        let (hn, norms) = normalize_columns(h)?;
        let projs = self.projections(&hn)?;
        let ft = self.interest_scores(&projs, qt);
        let lina = LinaData::from_scores(ft.clone());
        let eval = lina.score(b, weights_b, hp)?;
        let mut value = eval.value;
        let grad_b = unflatten(eval.gradient.as_slice(), qt, qt);

        // ∂(−Σ log p(R))/∂F̃ with R = (I − B̃)F̃
        let mut bz = b.clone();
        bz.fill_diagonal(0.0);
        let i_b = DMatrix::identity(qt, qt) - bz;
        let resid = &i_b * &ft;
        let d = resid.map(|r| -laplace_logpdf_with_grad(r, hp.smooth_delta).1);
        let gf = i_b.transpose() * d;
        let (e, mut gn) = self.reconstruction_with(&projs, h.shape());
        value += e;
        for (blk, p) in self.blocks.iter().zip(&projs) {
            let gk = gf.columns(blk.cols.0, blk.cols.1) * blk.scores.transpose();
            blk.scatter(&p.pullback(&gk), &mut gn);
        }

        for (k, &v) in hn.iter().enumerate() {
            let (a, da) = smooth_abs(v, hp.smooth_delta);
            value += hp.lambda3 * weights_h.w[k] * a;
            gn[k] += hp.lambda3 * weights_h.w[k] * da;
        }
        // d(h/‖h‖) = (I − uuᵀ) dh / ‖h‖
        let mut grad_h = gn;
        for j in 0..qt {
            let u = hn.column(j);
            let along = u.dot(&grad_h.column(j));
            let col = (grad_h.column(j) - u * along) / norms[j];
            grad_h.set_column(j, &col);
        }
        Ok(MdEvaluation {
            value: value + self.reconstruction,
            grad_b,
            grad_h,
        })
    }
}

/// Joint score of `B̃` and `H`. The gradient stacks `vec(∂/∂B̃)` followed by
/// `vec(∂/∂H)`, both column-major.
pub fn md_score(
    b_tilde: &DMatrix<f64>,
    h: &TransformMatrix,
    model: &MeasurementModel,
    xbar: &DMatrix<f64>,
    weights_b: &AdaptiveWeights,
    weights_h: &AdaptiveWeights,
    hp: &Hyperparams,
) -> Result<ObjectiveEvaluation> {
    let e = MdProblem::new(model, xbar)?.evaluate(b_tilde, h.matrix(), weights_b, weights_h, hp)?;
    let grad = DVector::from_iterator(
        e.grad_b.len() + e.grad_h.len(),
        e.grad_b.iter().chain(e.grad_h.iter()).copied(),
    );
    Ok(ObjectiveEvaluation::new(e.value, grad))
}

/// 1-based domain of each factor of a merged model.
pub fn factor_domains(model: &MeasurementModel, aug: &AugmentedDataset) -> Result<Vec<usize>> {
    if aug.row_origin().len() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "augmented data has {} variables, model has {}",
            aug.row_origin().len(),
            model.p()
        )));
    }
    Ok(model
        .clusters()
        .clusters()
        .iter()
        .map(|c| aug.row_origin()[c[0]].domain)
        .collect())
}

/// Largest per-domain factor count.
pub fn default_q_tilde(domains: &[usize]) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for d in domains {
        *counts.entry(*d).or_insert(0usize) += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

/// Starting `H`: the `k`-th factor of every domain goes to interest factor
/// `k` (stacked identities when every domain has `q̃` factors). When `q̃`
/// exceeds every domain's count, augmented factors are dealt round-robin.
pub fn initial_h(domains: &[usize], q_tilde: usize) -> Result<DMatrix<f64>> {
    let q = domains.len();
    if q_tilde == 0 || q_tilde > q {
        return Err(Error::InvalidInput(format!("q̃ = {q_tilde} must lie in 1..={q}")));
    }
    let mut h = DMatrix::zeros(q, q_tilde);
    if default_q_tilde(domains) >= q_tilde {
        let mut seen = std::collections::BTreeMap::new();
        for (r, d) in domains.iter().enumerate() {
            let k = seen.entry(*d).or_insert(0usize);
            h[(r, *k % q_tilde)] = 1.0;
            *k += 1;
        }
    } else {
        for r in 0..q {
            h[(r, r % q_tilde)] = 1.0;
        }
    }
    Ok(h)
}

/// Largest domain whose factor order is aligned by enumeration.
const PERM_ENUM_MAX: usize = 7;
/// Largest domain whose factor signs are aligned by enumeration.
const SIGN_ENUM_MAX: usize = 12;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                prefix.push(c);
                rec(prefix, used, out);
                prefix.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Reorders and flips the rows of `h0` within each domain so that
/// constrained single-domain effect estimates of the domain agree best with those of the
/// first domain.
///
/// Factor order and sign are set independently in each domain's measurement
/// model, and a continuous path of `H` with invertible domain blocks can
/// neither flip a single row nor exchange two rows, so both are settled
/// before optimization. Domains with `q̃` factors (at most
/// [`PERM_ENUM_MAX`]) get signed permutations; other domains up to
/// [`SIGN_ENUM_MAX`] factors get signs only. Ties keep `h0`.
pub fn align_domains(problem: &MdProblem, h0: &DMatrix<f64>, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let qt = h0.ncols();
    let column_of = |r: usize| {
        (0..qt)
            .max_by(|&a, &b| h0[(r, a)].abs().total_cmp(&h0[(r, b)].abs()).then(b.cmp(&a)))
            .unwrap_or(0)
    };
    let mut effects = Vec::with_capacity(problem.blocks.len());
    for blk in &problem.blocks {
        let k = blk.rows.len();
        let names = (0..k).map(|i| i.to_string()).collect();
        let b = LinaData::from_scores(blk.scores.clone()).fit(hp, names)?.b;
        let cols: Vec<usize> = blk.rows.iter().map(|&r| column_of(r)).collect();
        effects.push((b, cols));
    }
    let mut h = h0.clone();
    let Some((reference, ref_cols)) = effects.first() else {
        return Ok(h);
    };
    let mut target: DMatrix<f64> = DMatrix::zeros(qt, qt);
    for (i, &ci) in ref_cols.iter().enumerate() {
        for (j, &cj) in ref_cols.iter().enumerate() {
            if i != j && ci != cj {
                target[(ci, cj)] += reference[(i, j)];
            }
        }
    }
    for (blk, (b, cols)) in problem.blocks.iter().zip(&effects).skip(1) {
        let k = blk.rows.len();
        let orders: Vec<Vec<usize>> = if k == qt && k <= PERM_ENUM_MAX {
            permutations(k).into_iter().map(|p| p.iter().map(|&i| cols[i]).collect()).collect()
        } else if k <= SIGN_ENUM_MAX {
            vec![cols.clone()]
        } else {
            continue;
        };
        let agreement = |order: &[usize], mask: usize| {
            let sign = |i: usize| if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            let mut total = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if i != j && order[i] != order[j] {
                        total += sign(i) * sign(j) * b[(i, j)] * target[(order[i], order[j])];
                    }
                }
            }
            total
        };
        let mut best = (0usize, 0usize, agreement(&orders[0], 0));
        for (o, order) in orders.iter().enumerate() {
            for mask in 0..1usize << k {
                let v = agreement(order, mask);
                if v > best.2 + 1e-12 * best.2.abs() {
                    best = (o, mask, v);
                }
            }
        }
        let (o, mask, _) = best;
        for (i, &r) in blk.rows.iter().enumerate() {
            let weight = h0[(r, cols[i])].abs();
            let sign = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            let mut row = DMatrix::zeros(1, qt);
            row[(0, orders[o][i])] = sign * weight;
            h.set_row(r, &row.row(0));
        }
    }
    Ok(h)
}

fn solver_options(hp: &Hyperparams) -> SolverOptions {
    SolverOptions {
        tol: hp.solver_tol,
        ftol: hp.solver_ftol,
        max_iter: hp.solver_max_iter,
        ..Default::default()
    }
}

fn nan_eval(n: usize) -> ObjectiveEvaluation {
    ObjectiveEvaluation::new(f64::INFINITY, DVector::zeros(n))
}

/// Adaptive weights for `H` from minimizing `E(H)` alone, starting at `h0`.
pub fn h_weights(problem: &MdProblem, h0: &DMatrix<f64>, hp: &Hyperparams) -> Result<AdaptiveWeights> {
    let (q, qt) = h0.shape();
    let objective = |x: &DVector<f64>| {
        let h = unflatten(x.as_slice(), q, qt);
        match problem.reconstruction_error(&h) {
            Ok((v, g)) => ObjectiveEvaluation::new(v, flatten(&g)),
            Err(_) => nan_eval(x.len()),
        }
    };
    let res = minimize_unconstrained(objective, flatten(h0), &solver_options(hp))?;
    let h_hat = normalize_columns(&unflatten(res.x.as_slice(), q, qt))?.0;
    Ok(AdaptiveWeights::from_estimate(&h_hat))
}

/// Alternates `H` and `B̃` updates, hardens `H`, and refits `B̃`.
pub fn fit_md(model: &MeasurementModel, xbar: &AugmentedDataset, q_tilde: usize, hp: &Hyperparams) -> Result<MdStructureModel> {
    hp.validate()?;
    let domains = factor_domains(model, xbar)?;
    let problem = MdProblem::augmented(model, xbar)?;
    let h0 = align_domains(&problem, &initial_h(&domains, q_tilde)?, hp)?;
    let augmented_names = model.clusters().names().to_vec();
    fit_md_from(&problem, h0, hp, augmented_names)
}

/// [`fit_md`] on precomputed augmented scores from a given starting `H`.
pub fn fit_md_from(problem: &MdProblem, h0: DMatrix<f64>, hp: &Hyperparams, augmented_names: Vec<String>) -> Result<MdStructureModel> {
    check_h(&h0)?;
    let (q, qt) = h0.shape();
    if problem.q() != q || augmented_names.len() != q {
        return Err(Error::DimensionMismatch(format!("H has {q} rows, problem has {} factors", problem.q())));
    }
    // the measurement term is constant; keep it out of the stopping rules
    let problem = &MdProblem {
        reconstruction: 0.0,
        ..problem.clone()
    };
    let weights_h = h_weights(problem, &h0, hp)?;
    let weights_b = problem.interest_data(&h0)?.adaptive_weights(hp)?;
    let opts = solver_options(hp);

    let mut h = h0;
    let mut b = DMatrix::zeros(qt, qt);
    let mut state = PenaltyState::initial(hp);
    let mut prev = problem.evaluate(&b, &h, &weights_b, &weights_h, hp)?.value;
    let mut trace = Vec::new();
    let mut converged = false;

    for round in 1..=hp.max_alt {
        // H step with B̃ fixed
        let b_fixed = b.clone();
        let objective = |x: &DVector<f64>| {
            let hm = unflatten(x.as_slice(), q, qt);
            match problem.evaluate(&b_fixed, &hm, &weights_b, &weights_h, hp) {
                Ok(e) => ObjectiveEvaluation::new(e.value, flatten(&e.grad_h)),
                Err(_) => nan_eval(x.len()),
            }
        };
        let res = minimize_unconstrained(objective, flatten(&h), &opts)?;
        let candidate = unflatten(res.x.as_slice(), q, qt);
        // every domain block of H must stay full rank, not just H itself
        let usable = check_h(&candidate).is_ok()
            && problem
                .evaluate(&b_fixed, &candidate, &weights_b, &weights_h, hp)
                .is_ok_and(|e| e.value.is_finite());
        if usable {
            h = candidate;
        }

        // B̃ step with H fixed
        let h_fixed = h.clone();
        let out = penalty_loop_from(
            |bm| match problem.evaluate(bm, &h_fixed, &weights_b, &weights_h, hp) {
                Ok(e) => ObjectiveEvaluation::new(e.value, flatten(&e.grad_b)),
                Err(_) => nan_eval(qt * qt),
            },
            hp,
            &b,
            state,
        )?;
        b = out.b;
        state = out.state;

        let value = problem.evaluate(&b, &h, &weights_b, &weights_h, hp)?.value;
        trace.push(AlternationEntry {
            round,
            objective: value,
            rho: state.rho,
            h_value: state.h_value,
        });
        let change = (prev - value).abs() / prev.abs().max(1.0);
        prev = value;
        if change < ALT_TOL {
            converged = true;
            break;
        }
    }

    let h = TransformMatrix::new(normalize_columns(&h)?.0)?;
    let assignment = problem.harden(&h)?;
    let names = interest_names(&assignment, &augmented_names);
    let refit = problem.interest_data(&assignment.h_hard())?.fit(hp, names)?;
    Ok(MdStructureModel {
        b_tilde: refit.b,
        pruned_b_tilde: refit.pruned_b,
        b_tilde_joint: b,
        h,
        interest_names: refit.factor_names,
        augmented_names,
        weights_b: refit.weights,
        weights_h,
        report: refit.report,
        assignment,
        alternation: trace,
        alternation_converged: converged,
    })
}

/// Names interest factors after the augmented factors they represent.
pub fn interest_names(assignment: &HardAssignment, augmented_names: &[String]) -> Vec<String> {
    (0..assignment.q_tilde)
        .map(|j| {
            assignment
                .members(j)
                .iter()
                .map(|&r| augmented_names[r].as_str())
                .collect::<Vec<_>>()
                .join("+")
        })
        .collect()
}

/// Constrained refit of `B̃` with `H` frozen at the hardened assignment.
/// `E(H)` and the `H` penalty are constant here and left out.
pub fn refit_b_tilde(
    assignment: &HardAssignment,
    fbar: &DMatrix<f64>,
    hp: &Hyperparams,
    names: Vec<String>,
) -> Result<StructureModel> {
    if fbar.nrows() != assignment.row_to_interest.len() {
        return Err(Error::DimensionMismatch(format!(
            "F̄ has {} rows, assignment covers {}",
            fbar.nrows(),
            assignment.row_to_interest.len()
        )));
    }
    let problem = MdProblem::from_scores(fbar.clone());
    problem.interest_data(&assignment.h_hard())?.fit(hp, names)
}

/// Pruned `B̃` refit under the hardened assignment.
pub fn update_b_tilde(assignment: &HardAssignment, fbar: &FactorScores, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let names = (1..=assignment.q_tilde).map(|j| format!("f{j}")).collect();
    Ok(refit_b_tilde(assignment, &fbar.scores, hp, names)?.pruned_b)
}
