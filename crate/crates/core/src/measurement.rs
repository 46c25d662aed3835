//! Confirmatory factor analysis under a pure-indicator pattern and the
//! projection estimate of factor scores.

use nalgebra::{DMatrix, DVector};

use crate::data::AugmentedDataset;
use crate::error::{Error, Result};
use crate::linalg::{covariance, left_pinv};
use crate::optim::{minimize_unconstrained, ObjectiveEvaluation, SolverOptions, SolverStatus};
use crate::triad::ClusterSpec;

/// Lower bound for error variances; estimates pinned here are Heywood cases.
pub const PSI_FLOOR: f64 = 1e-6;

/// Tolerance on the smallest eigenvalue of `GᵀG` relative to the largest.
pub const RANK_TOL: f64 = 1e-10;

const MAX_FACTOR_CORR: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    loadings: DMatrix<f64>,
    error_variances: DVector<f64>,
    factor_correlations: DMatrix<f64>,
    clusters: ClusterSpec,
    heywood: Vec<usize>,
}

impl MeasurementModel {
    /// Builds a model from explicit parameters, checking the pure pattern.
    pub fn new(
        loadings: DMatrix<f64>,
        error_variances: DVector<f64>,
        factor_correlations: DMatrix<f64>,
        clusters: ClusterSpec,
    ) -> Result<Self> {
        let (p, q) = loadings.shape();
        if error_variances.len() != p || factor_correlations.shape() != (q, q) || clusters.q() != q {
            return Err(Error::DimensionMismatch(format!(
                "loadings {p}x{q}, {} error variances, factor correlations {:?}, {} clusters",
                error_variances.len(),
                factor_correlations.shape(),
                clusters.q()
            )));
        }
        if clusters.min_vars() > p {
            return Err(Error::DimensionMismatch("cluster indices exceed the loading rows".into()));
        }
        for (f, c) in clusters.clusters().iter().enumerate() {
            for i in 0..p {
                if loadings[(i, f)] != 0.0 && !c.contains(&i) {
                    return Err(Error::InvalidInput(format!(
                        "loading ({i}, {f}) is outside the cluster pattern"
                    )));
                }
            }
        }
        if error_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("error variances must be positive".into()));
        }
        Ok(Self {
            loadings,
            error_variances,
            factor_correlations,
            clusters,
            heywood: Vec::new(),
        })
    }

    /// Records which error variances hit their lower bound.
    pub fn with_heywood_cases(mut self, heywood: Vec<usize>) -> Self {
        self.heywood = heywood;
        self
    }

    /// Model with uncorrelated factors.
    pub fn uncorrelated(loadings: DMatrix<f64>, error_variances: DVector<f64>, clusters: ClusterSpec) -> Result<Self> {
        let q = loadings.ncols();
        Self::new(loadings, error_variances, DMatrix::identity(q, q), clusters)
    }

    /// `G` (p × q).
    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Diagonal of `Ψ`.
    pub fn error_variances(&self) -> &DVector<f64> {
        &self.error_variances
    }

    /// Correlation matrix of the factors (unit diagonal).
    pub fn factor_correlations(&self) -> &DMatrix<f64> {
        &self.factor_correlations
    }

    pub fn clusters(&self) -> &ClusterSpec {
        &self.clusters
    }

    /// Indicators whose error variance was pinned to [`PSI_FLOOR`].
    pub fn heywood_cases(&self) -> &[usize] {
        &self.heywood
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn q(&self) -> usize {
        self.loadings.ncols()
    }
}

/// Estimated factor values, one row per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    pub scores: DMatrix<f64>,
}

impl FactorScores {
    pub fn q(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n(&self) -> usize {
        self.scores.ncols()
    }
}

/// `G Φ Gᵀ + Ψ`.
pub fn implied_covariance(model: &MeasurementModel) -> DMatrix<f64> {
    let g = &model.loadings;
    let mut c = g * &model.factor_correlations * g.transpose();
    for i in 0..c.nrows() {
        c[(i, i)] += model.error_variances[i];
    }
    c
}

/// `(GᵀG)⁻¹ Gᵀ X`.
pub fn factor_scores(model: &MeasurementModel, data: &DMatrix<f64>) -> Result<FactorScores> {
    if data.nrows() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} variables, loadings have {} rows",
            data.nrows(),
            model.p()
        )));
    }
    let (pinv, _) = left_pinv(&model.loadings, RANK_TOL).ok_or(Error::RankDeficientLoadings)?;
    Ok(FactorScores { scores: pinv * data })
}

/// Unweighted least-squares CFA with unit factor variances.
///
/// Each indicator loads on its own cluster's factor only. The free
/// parameters are the loadings and the factor correlations; error variances
/// are concentrated out as `ψ_i = max(S_ii − (GΦGᵀ)_ii, floor)`.
pub fn fit_cfa(data: &DMatrix<f64>, clusters: &ClusterSpec) -> Result<MeasurementModel> {
    let p = data.nrows();
    if clusters.min_vars() > p {
        return Err(Error::DimensionMismatch(format!(
            "clusters reference variable {} but data has {p}",
            clusters.min_vars() - 1
        )));
    }
    let mut factor = vec![usize::MAX; p];
    for (f, c) in clusters.clusters().iter().enumerate() {
        if c.len() < 2 {
            return Err(Error::InvalidInput(format!("cluster {} has fewer than 2 indicators", clusters.names()[f])));
        }
        for &i in c {
            factor[i] = f;
        }
    }
    if let Some(i) = factor.iter().position(|&f| f == usize::MAX) {
        return Err(Error::InvalidInput(format!("variable {i} is not assigned to any cluster")));
    }
    if data.ncols() < 3 {
        return Err(Error::InsufficientSamples {
            required: 3,
            actual: data.ncols(),
        });
    }
    let s = covariance(data);
    let q = clusters.q();
    let pairs: Vec<(usize, usize)> = (0..q).flat_map(|a| ((a + 1)..q).map(move |b| (a, b))).collect();

    let x0 = initial_parameters(&s, &factor, clusters, &pairs);
    let objective = |x: &DVector<f64>| uls_objective(x, &s, &factor, &pairs, q);
    let opts = SolverOptions {
        tol: 1e-9,
        ftol: 1e-15,
        max_iter: 5000,
        memory: 10,
    };
    let res = minimize_unconstrained(objective, x0, &opts)?;
    if res.status == SolverStatus::MaxIterations {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            grad_norm: res.grad_norm,
        });
    }

    let (mut lambda, mut phi) = unpack(&res.x, p, q, &pairs);
    // sign convention: lowest-index indicator of each factor loads positively
    for (f, c) in clusters.clusters().iter().enumerate() {
        let first = *c.iter().min().expect("clusters are non-empty");
        if lambda[first] < 0.0 {
            for &i in c {
                lambda[i] = -lambda[i];
            }
            for g in 0..q {
                if g != f {
                    phi[(f, g)] = -phi[(f, g)];
                    phi[(g, f)] = -phi[(g, f)];
                }
            }
        }
    }
    let phi = nearest_correlation(&phi);

    let mut loadings = DMatrix::zeros(p, q);
    let mut psi = DVector::zeros(p);
    let mut heywood = Vec::new();
    for i in 0..p {
        loadings[(i, factor[i])] = lambda[i];
        let resid = s[(i, i)] - lambda[i] * lambda[i];
        if resid <= PSI_FLOOR {
            heywood.push(i);
        }
        psi[i] = resid.max(PSI_FLOOR);
    }
    let mut model = MeasurementModel::new(loadings, psi, phi, clusters.clone())?;
    model.heywood = heywood;
    Ok(model)
}

fn initial_parameters(s: &DMatrix<f64>, factor: &[usize], clusters: &ClusterSpec, pairs: &[(usize, usize)]) -> DVector<f64> {
    let p = s.nrows();
    let mut x = DVector::zeros(p + pairs.len());
    for i in 0..p {
        let sibling = clusters.clusters()[factor[i]]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| s[(i, j)].abs())
            .fold(0.0, f64::max);
        // signs relative to the lowest-index indicator, or descent can stall at λ = 0
        let first = *clusters.clusters()[factor[i]].iter().min().expect("clusters are non-empty");
        let sign = if i != first && s[(i, first)] < 0.0 { -1.0 } else { 1.0 };
        x[i] = sign * sibling.sqrt().max(1e-3);
    }
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let mut total = 0.0;
        let mut count = 0.0;
        for &i in &clusters.clusters()[a] {
            for &j in &clusters.clusters()[b] {
                total += s[(i, j)] / (x[i] * x[j]);
                count += 1.0;
            }
        }
        x[p + k] = (total / count).clamp(-0.9, 0.9);
    }
    x
}

fn unpack(x: &DVector<f64>, p: usize, q: usize, pairs: &[(usize, usize)]) -> (Vec<f64>, DMatrix<f64>) {
    let lambda = x.rows(0, p).iter().copied().collect();
    let mut phi = DMatrix::identity(q, q);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        phi[(a, b)] = x[p + k];
        phi[(b, a)] = x[p + k];
    }
    (lambda, phi)
}

fn uls_objective(x: &DVector<f64>, s: &DMatrix<f64>, factor: &[usize], pairs: &[(usize, usize)], q: usize) -> ObjectiveEvaluation {
    let p = s.nrows();
    let (lambda, phi) = unpack(x, p, q, pairs);
    let mut grad = DVector::zeros(x.len());
    let mut pair_index = DMatrix::from_element(q, q, usize::MAX);
    for (k, &(a, b)) in pairs.iter().enumerate() {
        pair_index[(a, b)] = k;
        pair_index[(b, a)] = k;
    }
    let mut value = 0.0;
    for i in 0..p {
        // diagonal: error variance absorbs the residual down to the floor
        let r = (s[(i, i)] - lambda[i] * lambda[i] - PSI_FLOOR).min(0.0);
        value += 0.5 * r * r;
        grad[i] -= r * 2.0 * lambda[i];
        for j in (i + 1)..p {
            let (a, b) = (factor[i], factor[j]);
            let c = phi[(a, b)];
            let r = s[(i, j)] - lambda[i] * lambda[j] * c;
            // counted twice for (i, j) and (j, i)
            value += r * r;
            grad[i] -= 2.0 * r * lambda[j] * c;
            grad[j] -= 2.0 * r * lambda[i] * c;
            if a != b {
                grad[p + pair_index[(a, b)]] -= 2.0 * r * lambda[i] * lambda[j];
            }
        }
    }
    ObjectiveEvaluation::new(value, grad)
}

/// Clips eigenvalues and rescales to unit diagonal so the factor correlation
/// matrix is positive definite.
fn nearest_correlation(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let q = phi.nrows();
    let eig = phi.clone().symmetric_eigen();
    if eig.eigenvalues.min() > 1e-6 && phi.iter().all(|v| v.abs() <= 1.0) {
        return phi.clone();
    }
    let clipped = eig.eigenvalues.map(|l| l.max(1e-6));
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    DMatrix::from_fn(q, q, |i, j| {
        if i == j {
            1.0
        } else {
            (m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()).clamp(-MAX_FACTOR_CORR, MAX_FACTOR_CORR)
        }
    })
}

/// Fits every domain of an augmented dataset separately and assembles the
/// block-diagonal loading matrix `Ḡ`.
///
/// `clusters[m]` indexes variables within domain `m + 1`. Cross-domain
/// loadings and factor correlations are structurally zero.
pub fn fit_cfa_augmented(aug: &AugmentedDataset, clusters: &[ClusterSpec]) -> Result<MeasurementModel> {
    let m = aug.n_domains();
    if clusters.len() != m {
        return Err(Error::DimensionMismatch(format!("{} cluster specs for {m} domains", clusters.len())));
    }
    let models = (0..m)
        .map(|d| {
            let domain = aug.extract(d + 1)?;
            fit_cfa(domain.data(), &clusters[d])
        })
        .collect::<Result<Vec<_>>>()?;
    merge_models(&models)
}

/// Block-diagonal combination of per-domain measurement models.
pub fn merge_models(models: &[MeasurementModel]) -> Result<MeasurementModel> {
    if models.len() == 1 {
        return Ok(models[0].clone());
    }
    let p: usize = models.iter().map(|m| m.p()).sum();
    let q: usize = models.iter().map(|m| m.q()).sum();
    let mut loadings = DMatrix::zeros(p, q);
    let mut phi = DMatrix::zeros(q, q);
    let mut psi = DVector::zeros(p);
    let mut groups = Vec::new();
    let mut names = Vec::new();
    let mut heywood = Vec::new();
    let (mut r, mut c) = (0, 0);
    for (d, model) in models.iter().enumerate() {
        loadings.view_mut((r, c), (model.p(), model.q())).copy_from(&model.loadings);
        phi.view_mut((c, c), (model.q(), model.q())).copy_from(&model.factor_correlations);
        psi.rows_mut(r, model.p()).copy_from(&model.error_variances);
        let shifted = model.clusters.shifted(r);
        groups.extend(shifted.clusters().iter().cloned());
        names.extend(model.clusters.names().iter().map(|n| format!("d{}:{n}", d + 1)));
        heywood.extend(model.heywood.iter().map(|i| i + r));
        r += model.p();
        c += model.q();
    }
    let clusters = ClusterSpec::with_names(groups, names, p)?;
    let mut merged = MeasurementModel::new(loadings, psi, phi, clusters)?;
    merged.heywood = heywood;
    Ok(merged)
}
