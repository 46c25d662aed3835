//! Evaluation: skeleton recovery metrics, permutation-matched effect error,
//! variance inflation factors, and k-fold cross-validation over `(λ1, ε)`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, DomainDataset};
use crate::error::{Error, Result};
use crate::lina::{neg_log_likelihood, LinaData};
use crate::mdlina::MdStructureModel;
use crate::measurement::fit_cfa;
use crate::params::Hyperparams;
use crate::synth::stream;
use crate::triad::ClusterSpec;

/// VIF at or above this value flags multicollinearity.
pub const VIF_FLAG: f64 = 10.0;
/// Largest `q` matched exactly; greedy above.
pub const EXACT_MATCH_MAX_Q: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl SkeletonMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let f1 = if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        Self {
            recall,
            precision,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{}, truth is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Undirected edge recovery with supports `|b| > eps`.
pub fn skeleton_metrics(b_est: &DMatrix<f64>, b_true: &DMatrix<f64>, eps: f64) -> Result<SkeletonMetrics> {
    check_same_shape(b_est, b_true)?;
    let q = b_est.nrows();
    let edge = |b: &DMatrix<f64>, i: usize, j: usize| b[(i, j)].abs() > eps || b[(j, i)].abs() > eps;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..q {
        for j in (i + 1)..q {
            match (edge(b_est, i, j), edge(b_true, i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(SkeletonMetrics::from_counts(tp, fp, fn_))
}

/// Directed edge recovery; a reversed edge counts as one false positive and
/// one false negative.
pub fn directed_metrics(b_est: &DMatrix<f64>, b_true: &DMatrix<f64>, eps: f64) -> Result<SkeletonMetrics> {
    check_same_shape(b_est, b_true)?;
    let q = b_est.nrows();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..q {
        for j in 0..q {
            if i == j {
                continue;
            }
            match (b_est[(i, j)].abs() > eps, b_true[(i, j)].abs() > eps) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(SkeletonMetrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectMatch {
    /// `permutation[j]` is the estimated factor matched to true factor `j`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    pub mean_abs_error: f64,
}

/// Uncentered correlation (congruence) of two loading columns.
fn column_corr(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let (x, y) = (a.column(i), b.column(j));
    let denom = x.norm() * y.norm();
    if denom > 0.0 {
        x.dot(&y) / denom
    } else {
        0.0
    }
}

/// Assignment maximizing `Σ_j score[j][perm[j]]`, exact by subset dynamic
/// programming.
fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let q = score.len();
    let full = 1usize << q;
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if best[mask] == f64::NEG_INFINITY {
            continue;
        }
        let j = mask.count_ones() as usize;
        if j == q {
            continue;
        }
        for c in 0..q {
            if mask & (1 << c) != 0 {
                continue;
            }
            let next = mask | (1 << c);
            let v = best[mask] + score[j][c];
            // strict comparison keeps the lowest column on ties
            if v > best[next] {
                best[next] = v;
                choice[next] = c;
            }
        }
    }
    let mut perm = vec![0; q];
    let mut mask = full - 1;
    for j in (0..q).rev() {
        let c = choice[mask];
        perm[j] = c;
        mask &= !(1 << c);
    }
    perm
}

fn greedy_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let q = score.len();
    let mut pairs: Vec<(usize, usize)> = (0..q).flat_map(|j| (0..q).map(move |c| (j, c))).collect();
    pairs.sort_by(|a, b| score[b.0][b.1].total_cmp(&score[a.0][a.1]).then(a.cmp(b)));
    let mut perm = vec![usize::MAX; q];
    let mut used = vec![false; q];
    for (j, c) in pairs {
        if perm[j] == usize::MAX && !used[c] {
            perm[j] = c;
            used[c] = true;
        }
    }
    perm
}

/// Matches estimated to true factors by absolute loading-column congruence;
/// returns `(permutation, signs)` with `permutation[j]` the estimated
/// factor matched to true factor `j`.
pub fn match_factors(g_est: &DMatrix<f64>, g_true: &DMatrix<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    if g_est.shape() != g_true.shape() {
        return Err(Error::DimensionMismatch(format!(
            "loadings are {}x{} and {}x{}",
            g_est.nrows(),
            g_est.ncols(),
            g_true.nrows(),
            g_true.ncols()
        )));
    }
    let q = g_true.ncols();
    let corr: Vec<Vec<f64>> = (0..q).map(|j| (0..q).map(|c| column_corr(g_true, j, g_est, c)).collect()).collect();
    let abs: Vec<Vec<f64>> = corr.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let permutation = if q <= EXACT_MATCH_MAX_Q {
        best_assignment(&abs)
    } else {
        greedy_assignment(&abs)
    };
    let signs = (0..q).map(|j| if corr[j][permutation[j]] < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok((permutation, signs))
}

/// Aligns estimated factors to true ones by absolute loading-column
/// correlation and reports the mean `|B_est − B_true|` over the union of
/// both supports after alignment.
pub fn matched_effect_error(
    b_est: &DMatrix<f64>,
    g_est: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
    g_true: &DMatrix<f64>,
) -> Result<EffectMatch> {
    check_same_shape(b_est, b_true)?;
    let q = b_true.nrows();
    if g_est.shape() != g_true.shape() || g_true.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "loadings are {}x{} and {}x{} for {q} factors",
            g_est.nrows(),
            g_est.ncols(),
            g_true.nrows(),
            g_true.ncols()
        )));
    }
    let (permutation, signs) = match_factors(g_est, g_true)?;
    let mean_abs_error = union_abs_error(&aligned_effects(b_est, &permutation, &signs), b_true);
    Ok(EffectMatch {
        permutation,
        signs,
        mean_abs_error,
    })
}

fn union_abs_error(aligned: &DMatrix<f64>, b_true: &DMatrix<f64>) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for (a, t) in aligned.iter().zip(b_true.iter()) {
        if *a != 0.0 || *t != 0.0 {
            total += (a - t).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Recovery of a multi-domain fit against per-domain truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdRecovery {
    /// `B̃` against the first domain's effects, after alignment.
    pub skeleton: SkeletonMetrics,
    pub directed: SkeletonMetrics,
    pub mean_abs_error: f64,
    /// Share of augmented factors assigned to the interest factor of their
    /// first-domain twin.
    pub assignment_accuracy: f64,
    /// `interest[j]` is the interest factor holding true factor `j`.
    pub interest: Vec<usize>,
}

/// Scores a multi-domain fit. `loadings` is the augmented `p × Σq_m`
/// loading matrix with domain `m` in rows `row_blocks[m]` (first, count), and
/// `truth[m]` holds that domain's `(B, G)`. Estimated factors are matched to
/// true ones within each domain by loading congruence; true factor `j` is
/// then identified with the interest factor of its first-domain estimate.
pub fn md_recovery(
    model: &MdStructureModel,
    loadings: &DMatrix<f64>,
    row_blocks: &[(usize, usize)],
    truth: &[(DMatrix<f64>, DMatrix<f64>)],
    eps: f64,
) -> Result<MdRecovery> {
    if row_blocks.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} row blocks for {} domains of truth",
            row_blocks.len(),
            truth.len()
        )));
    }
    let q_aug = loadings.ncols();
    if model.assignment.row_to_interest.len() != q_aug {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} factors, loadings have {q_aug}",
            model.assignment.row_to_interest.len()
        )));
    }
    let q = truth[0].0.nrows();
    let mut twins: Vec<Vec<(usize, f64)>> = Vec::with_capacity(truth.len());
    for (m, (&(r0, nr), (_, g_true))) in row_blocks.iter().zip(truth).enumerate() {
        let block = loadings.rows(r0, nr);
        let cols: Vec<usize> = (0..q_aug).filter(|&c| block.column(c).iter().any(|v| *v != 0.0)).collect();
        let g_est = block.select_columns(&cols);
        if g_est.shape() != g_true.shape() || g_true.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "domain {}: estimated loadings {}x{}, true {}x{}",
                m + 1,
                g_est.nrows(),
                g_est.ncols(),
                g_true.nrows(),
                g_true.ncols()
            )));
        }
        let (perm, signs) = match_factors(&g_est, g_true)?;
        twins.push(perm.iter().zip(&signs).map(|(&c, &s)| (cols[c], s)).collect());
    }
    let a = &model.assignment;
    let interest: Vec<usize> = twins[0].iter().map(|&(r, _)| a.row_to_interest[r]).collect();
    let mut correct = 0usize;
    for j in 0..q {
        let unique = interest.iter().filter(|&&c| c == interest[j]).count() == 1;
        correct += twins.iter().filter(|t| unique && a.row_to_interest[t[j].0] == interest[j]).count();
    }
    let assignment_accuracy = correct as f64 / (q * twins.len()) as f64;
    let b_tilde = &model.pruned_b_tilde;
    if b_tilde.nrows() != q {
        return Err(Error::DimensionMismatch(format!("B̃ has {} interest factors, truth has {q}", b_tilde.nrows())));
    }
    let signs: Vec<f64> = twins[0].iter().map(|&(r, s)| s * a.weights[r].signum()).collect();
    let aligned = aligned_effects(b_tilde, &interest, &signs);
    Ok(MdRecovery {
        skeleton: skeleton_metrics(&aligned, &truth[0].0, eps)?,
        directed: directed_metrics(&aligned, &truth[0].0, eps)?,
        mean_abs_error: union_abs_error(&aligned, &truth[0].0),
        assignment_accuracy,
        interest,
    })
}

/// `B_est` re-indexed to the true factors: entry `(i, j)` is
/// `s_i s_j b_est[π(i), π(j)]`.
pub fn aligned_effects(b_est: &DMatrix<f64>, permutation: &[usize], signs: &[f64]) -> DMatrix<f64> {
    let q = permutation.len();
    DMatrix::from_fn(q, q, |i, j| signs[i] * signs[j] * b_est[(permutation[i], permutation[j])])
}

/// Scores of one fitted model against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub skeleton: SkeletonMetrics,
    pub directed: SkeletonMetrics,
    pub mean_abs_error: f64,
    /// Estimated (or interest) factor matched to each true factor.
    pub permutation: Vec<usize>,
    /// Multi-domain fits only.
    pub assignment_accuracy: Option<f64>,
}

impl EvalReport {
    /// Single-domain fit: match factors by loadings, then compare the
    /// aligned pruned effects with supports `|b| > eps`.
    pub fn single(
        b_est: &DMatrix<f64>,
        g_est: &DMatrix<f64>,
        b_true: &DMatrix<f64>,
        g_true: &DMatrix<f64>,
        eps: f64,
    ) -> Result<Self> {
        let m = matched_effect_error(b_est, g_est, b_true, g_true)?;
        let aligned = aligned_effects(b_est, &m.permutation, &m.signs);
        Ok(Self {
            skeleton: skeleton_metrics(&aligned, b_true, eps)?,
            directed: directed_metrics(&aligned, b_true, eps)?,
            mean_abs_error: m.mean_abs_error,
            permutation: m.permutation,
            assignment_accuracy: None,
        })
    }

    pub fn multi(r: MdRecovery) -> Self {
        Self {
            skeleton: r.skeleton,
            directed: r.directed,
            mean_abs_error: r.mean_abs_error,
            permutation: r.interest,
            assignment_accuracy: Some(r.assignment_accuracy),
        }
    }
}

/// Variance inflation factor `1/(1 − R²)` of each row regressed on the others.
pub fn vif(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (p, n) = x.shape();
    if n <= p {
        return Err(Error::InsufficientSamples { required: p + 1, actual: n });
    }
    let z = crate::data::standardize_rows(x)?;
    let r = &z * z.transpose() / (n as f64 - 1.0);
    // the diagonal of the inverse correlation matrix is 1/(1 − R²_i)
    let inv = crate::linalg::spd_inverse(&r, 1e-12).ok_or(Error::SingularDesign)?;
    Ok((0..p).map(|i| inv[(i, i)]).collect())
}

pub fn vif_flags(v: &[f64]) -> Vec<bool> {
    v.iter().map(|x| *x >= VIF_FLAG).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda1: f64,
    pub eps: f64,
    /// `None` when a fold failed for this cell.
    pub mean_validation_negloglik: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub cells: Vec<CvCell>,
    /// Index into `cells`.
    pub best_cell: Option<usize>,
}

impl CvReport {
    pub fn best(&self) -> Option<&CvCell> {
        self.best_cell.map(|i| &self.cells[i])
    }
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds.
pub fn folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::InvalidInput(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, 0xcf));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Held-out negative log-likelihood of one `(λ1, ε)` cell on one fold. The
/// validation samples are scaled with the training means and deviations.
fn fold_loss(data: &DomainDataset, clusters: &ClusterSpec, train: &[usize], valid: &[usize], hp: &Hyperparams) -> Result<f64> {
    let raw_train = data.select_samples(train)?;
    let train = standardize(&raw_train)?;
    let model = fit_cfa(train.data(), clusters)?;
    let fit = LinaData::new(&model, train.data())?.fit(hp, clusters.names().to_vec())?;
    let mut valid = data.select_samples(valid)?.data().clone();
    for i in 0..valid.nrows() {
        let row: Vec<f64> = raw_train.data().row(i).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let sd = crate::linalg::cov(&row, &row).sqrt();
        valid.row_mut(i).apply(|v| *v = (*v - mean) / sd);
    }
    Ok(neg_log_likelihood(&fit.pruned_b, &model, &valid)?.0)
}

/// k-fold cross-validation of the single-domain fit over a `(λ1, ε)` grid.
///
/// Folds come from a shuffle seeded by `hp.seed`. Cells are scored by the
/// mean unpenalized held-out negative log-likelihood with the pruned `B`;
/// ties go to the smaller `λ1`, then the smaller `ε`.
pub fn cross_validate(
    data: &DomainDataset,
    clusters: &ClusterSpec,
    grid: &[(f64, f64)],
    k: usize,
    hp: &Hyperparams,
) -> Result<CvReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    let parts = folds(data.n_samples(), k, hp.seed)?;
    let cells: Vec<CvCell> = grid
        .par_iter()
        .map(|&(lambda1, eps)| {
            let cell_hp = Hyperparams {
                lambda1,
                threshold_eps: eps,
                ..hp.clone()
            };
            let losses: Result<Vec<f64>> = (0..k)
                .into_par_iter()
                .map(|f| {
                    let train: Vec<usize> = parts
                        .iter()
                        .enumerate()
                        .filter(|(g, _)| *g != f)
                        .flat_map(|(_, p)| p.iter().copied())
                        .collect();
                    fold_loss(data, clusters, &train, &parts[f], &cell_hp)
                })
                .collect();
            match losses {
                Ok(l) => CvCell {
                    lambda1,
                    eps,
                    mean_validation_negloglik: Some(l.iter().sum::<f64>() / k as f64),
                    error: None,
                },
                Err(e) => CvCell {
                    lambda1,
                    eps,
                    mean_validation_negloglik: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best_cell = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.mean_validation_negloglik.map(|v| (i, v, c.lambda1, c.eps)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.3.total_cmp(&b.3)))
        .map(|t| t.0);
    Ok(CvReport {
        folds: k,
        cells,
        best_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain3() -> DMatrix<f64> {
        // 1–2 and 2–3
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, -0.6, 0.0])
    }

    #[test]
    fn perfect_skeleton() {
        let m = skeleton_metrics(&chain3(), &chain3(), 0.3).unwrap();
        assert_eq!((m.recall, m.precision, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_right_skeleton() {
        // 1–2 and 1–3
        let est = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.5, 0.0, 0.0]);
        let m = skeleton_metrics(&est, &chain3(), 0.3).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 1));
        assert_abs_diff_eq!(m.recall, 0.5);
        assert_abs_diff_eq!(m.precision, 0.5);
        assert_abs_diff_eq!(m.f1, 0.5);
    }

    #[test]
    fn skeleton_ignores_direction_and_small_entries() {
        let est = chain3().transpose() + DMatrix::from_element(3, 3, 0.01);
        let m = skeleton_metrics(&est, &chain3(), 0.3).unwrap();
        assert_eq!(m.f1, 1.0);
        let d = directed_metrics(&chain3().transpose(), &chain3(), 0.3).unwrap();
        assert_eq!((d.tp, d.fp, d.fn_), (0, 2, 2));
    }

    #[test]
    fn empty_estimate_and_empty_truth() {
        let z = DMatrix::zeros(3, 3);
        let m = skeleton_metrics(&z, &chain3(), 0.3).unwrap();
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
        let m = skeleton_metrics(&z, &z, 0.3).unwrap();
        assert_eq!((m.recall, m.precision, m.f1), (1.0, 0.0, 0.0));
        assert!(skeleton_metrics(&z, &DMatrix::zeros(2, 2), 0.3).is_err());
    }

    #[test]
    fn matching_identity() {
        let g = DMatrix::from_row_slice(6, 3, &[0.7, 0., 0., 0.6, 0., 0., 0., 0.5, 0., 0., -0.8, 0., 0., 0., 0.4, 0., 0., 0.9]);
        let m = matched_effect_error(&chain3(), &g, &chain3(), &g).unwrap();
        assert_eq!(m.permutation, vec![0, 1, 2]);
        assert_eq!(m.signs, vec![1.0, 1.0, 1.0]);
        assert_eq!(m.mean_abs_error, 0.0);
    }

    #[test]
    fn matching_undoes_swap_and_sign_flip() {
        let g = DMatrix::from_row_slice(6, 3, &[0.7, 0., 0., 0.6, 0., 0., 0., 0.5, 0., 0., -0.8, 0., 0., 0., 0.4, 0., 0., 0.9]);
        // estimated factor c is true factor perm[c] with sign s[c]
        let (perm, s) = ([2usize, 0, 1], [1.0, -1.0, 1.0]);
        let g_est = DMatrix::from_fn(6, 3, |r, c| s[c] * g[(r, perm[c])]);
        let b_est = DMatrix::from_fn(3, 3, |a, c| s[a] * s[c] * chain3()[(perm[a], perm[c])]);
        let m = matched_effect_error(&b_est, &g_est, &chain3(), &g).unwrap();
        assert_eq!(m.permutation, vec![1, 2, 0]);
        assert_eq!(m.signs, vec![-1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(m.mean_abs_error, 0.0);
    }

    #[test]
    fn matched_error_over_union_support() {
        let g = DMatrix::<f64>::identity(2, 2);
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.8, 0.0]);
        // |0.2 − 0| + |0.8 − 1| over two entries
        assert_abs_diff_eq!(matched_effect_error(&e, &g, &t, &g).unwrap().mean_abs_error, 0.2, epsilon = 1e-15);
    }

    fn two_rows(a: &[f64], b: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2, a.len());
        m.row_mut(0).copy_from(&nalgebra::RowDVector::from_row_slice(a));
        m.row_mut(1).copy_from(&nalgebra::RowDVector::from_row_slice(b));
        m
    }

    #[test]
    fn vif_of_uncorrelated_rows_is_one() {
        // centered and orthogonal
        let x = two_rows(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]);
        for v in vif(&x).unwrap() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn vif_at_correlation_point_nine() {
        // u, w orthonormal and centered; y = 0.9u + √0.19·w has corr(u, y) = 0.9
        let u = [1.0, -1.0, 1.0, -1.0];
        let w = [1.0, 1.0, -1.0, -1.0];
        let y: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 0.9 * a + 0.19f64.sqrt() * b).collect();
        let expected = 1.0 / (1.0 - 0.81);
        for v in vif(&two_rows(&u, &y)).unwrap() {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-8);
        }
        assert_eq!(vif_flags(&[expected, 10.0, 12.0]), vec![false, true, true]);
    }

    #[test]
    fn duplicated_variable_is_singular() {
        let a = [0.3, -1.2, 0.5, 2.0, -0.1];
        assert!(matches!(vif(&two_rows(&a, &a)), Err(Error::SingularDesign)));
        assert!(matches!(vif(&two_rows(&a[..2], &a[..2])), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn folds_partition_samples() {
        let parts = folds(23, 5, 7).unwrap();
        assert_eq!(parts.len(), 5);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| p.len() == 4 || p.len() == 5));
        assert_eq!(parts, folds(23, 5, 7).unwrap());
        assert_ne!(parts, folds(23, 5, 8).unwrap());
        assert!(folds(3, 4, 0).is_err());
        assert!(folds(10, 1, 0).is_err());
    }
}
