//! Triad pseudo-residuals, a kernel independence test, pure-pair cluster
//! discovery, and pairwise latent-direction decisions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::linalg::{corr, cov};

/// Smallest sample size accepted by [`independence_test`].
pub const MIN_TEST_SAMPLES: usize = 50;

/// `|corr|` above this counts as "correlated" for a triple.
pub const CORRELATION_THRESHOLD: f64 = 0.05;

const DEGENERATE_COV: f64 = 1e-10;

/// Observed-variable indices grouped by latent factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSpec {
    clusters: Vec<Vec<usize>>,
    names: Vec<String>,
}

impl ClusterSpec {
    /// Factors are named `f1..fq`.
    pub fn new(clusters: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let names = (1..=clusters.len()).map(|i| format!("f{i}")).collect();
        Self::with_names(clusters, names, p)
    }

    pub fn with_names(clusters: Vec<Vec<usize>>, names: Vec<String>, p: usize) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidInput("at least one cluster is required".into()));
        }
        if names.len() != clusters.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} factor names for {} clusters",
                names.len(),
                clusters.len()
            )));
        }
        let mut seen = vec![false; p];
        for (f, c) in clusters.iter().enumerate() {
            if c.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has {} member(s); at least 2 pure indicators are required",
                    names[f],
                    c.len()
                )));
            }
            for &i in c {
                if i >= p {
                    return Err(Error::InvalidInput(format!("variable index {i} out of range for {p} variables")));
                }
                if seen[i] {
                    return Err(Error::InvalidInput(format!("variable {i} appears in more than one cluster")));
                }
                seen[i] = true;
            }
        }
        Ok(Self { clusters, names })
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn q(&self) -> usize {
        self.clusters.len()
    }

    /// Largest variable index plus one.
    pub fn min_vars(&self) -> usize {
        self.clusters.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Factor owning variable `i`, if any.
    pub fn factor_of(&self, i: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&i))
    }

    /// Every variable index assigned to some factor, in cluster order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.clusters.iter().flatten().copied()
    }

    /// Same clusters with indices shifted by `offset`, for building augmented specs.
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            clusters: self.clusters.iter().map(|c| c.iter().map(|i| i + offset).collect()).collect(),
            names: self.names.clone(),
        }
    }

    /// Clusters sorted internally and by smallest member, compared as sets.
    pub fn same_partition(&self, other: &ClusterSpec) -> bool {
        canonical(&self.clusters) == canonical(&other.clusters)
    }
}

fn canonical(clusters: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort_unstable();
            c
        })
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum KernelBandwidth {
    /// `exp(−d²/m)` with `m` the median squared pairwise distance.
    #[default]
    MedianHeuristic,
    /// Gaussian kernel width σ: `exp(−d²/(2σ²))`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTestConfig {
    pub alpha: f64,
    pub kernel_bandwidth: KernelBandwidth,
    pub max_test_samples: usize,
}

impl Default for IndependenceTestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            kernel_bandwidth: KernelBandwidth::MedianHeuristic,
            max_test_samples: 1000,
        }
    }
}

impl IndependenceTestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_test_samples < MIN_TEST_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "max_test_samples must be at least {MIN_TEST_SAMPLES}"
            )));
        }
        if let KernelBandwidth::Fixed(s) = self.kernel_bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("kernel width must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// `E = xi − cov(xi, xk)/cov(xj, xk) · xj`.
pub fn pseudo_residual(xi: &[f64], xj: &[f64], xk: &[f64]) -> Result<Vec<f64>> {
    let n = xi.len();
    if xj.len() != n || xk.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "series lengths {}, {}, {}",
            n,
            xj.len(),
            xk.len()
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientSamples { required: 3, actual: n });
    }
    let cjk = cov(xj, xk);
    if !(cjk.abs() > DEGENERATE_COV) {
        return Err(Error::DegenerateReference { cov: cjk });
    }
    let ratio = cov(xi, xk) / cjk;
    Ok(xi.iter().zip(xj).map(|(a, b)| a - ratio * b).collect())
}

/// Result of a kernel independence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsicResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// p-value of a Gaussian-kernel HSIC test of `u ⫫ v` with a gamma
/// approximation to the null distribution.
pub fn independence_test(u: &[f64], v: &[f64], cfg: &IndependenceTestConfig) -> Result<f64> {
    hsic_gamma(u, v, cfg).map(|r| r.p_value)
}

pub fn hsic_gamma(u: &[f64], v: &[f64], cfg: &IndependenceTestConfig) -> Result<HsicResult> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("series lengths {} and {}", u.len(), v.len())));
    }
    if u.len() < MIN_TEST_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_TEST_SAMPLES,
            actual: u.len(),
        });
    }
    cfg.validate()?;
    let idx = strided(u.len(), cfg.max_test_samples);
    let x: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let n = x.len();
    let nf = n as f64;

    let k = gram(&x, cfg.kernel_bandwidth);
    let l = gram(&y, cfg.kernel_bandwidth);
    let (kr, kg) = row_means(&k, n);
    let (lr, lg) = row_means(&l, n);

    let mut stat = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kc = k[i * n + j] - kr[i] - kr[j] + kg;
            let lc = l[i * n + j] - lr[i] - lr[j] + lg;
            let prod = kc * lc;
            stat += prod;
            if i != j {
                var += (prod / 6.0).powi(2);
            }
        }
    }
    stat /= nf;
    var /= nf * (nf - 1.0);
    var *= 72.0 * (nf - 4.0) * (nf - 5.0) / (nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0));

    let off_mean = |m: &[f64]| {
        let total: f64 = m.iter().sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i]).sum();
        (total - diag) / (nf * (nf - 1.0))
    };
    let mu_x = off_mean(&k);
    let mu_y = off_mean(&l);
    let mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / nf;

    if !(var > 0.0 && mean > 0.0) {
        // a constant series carries no dependence
        return Ok(HsicResult {
            statistic: stat,
            p_value: 1.0,
        });
    }
    let shape = mean * mean / var;
    let scale = var * nf / mean;
    let gamma = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::InvalidInput(format!("gamma null: {e}")))?;
    let p = gamma.sf(stat).clamp(0.0, 1.0);
    Ok(HsicResult {
        statistic: stat,
        p_value: p,
    })
}

fn strided(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let step = n as f64 / max as f64;
    (0..max).map(|k| ((k as f64 * step) as usize).min(n - 1)).collect()
}

fn gram(x: &[f64], bw: KernelBandwidth) -> Vec<f64> {
    let n = x.len();
    let width = match bw {
        KernelBandwidth::Fixed(s) => 2.0 * s * s,
        KernelBandwidth::MedianHeuristic => {
            let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    let diff = x[i] - x[j];
                    let sq = diff * diff;
                    if sq > 0.0 {
                        d.push(sq);
                    }
                }
            }
            if d.is_empty() {
                1.0
            } else {
                let mid = d.len() / 2;
                *d.select_nth_unstable_by(mid, f64::total_cmp).1
            }
        }
    };
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let diff = x[i] - x[j];
            let v = (-diff * diff / width).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn row_means(m: &[f64], n: usize) -> (Vec<f64>, f64) {
    let rows: Vec<f64> = (0..n).map(|i| m[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = rows.iter().sum::<f64>() / n as f64;
    (rows, grand)
}

fn row(data: &DomainDataset, i: usize) -> Vec<f64> {
    data.data().row(i).iter().copied().collect()
}

/// p-value of the test `E_(i,j|k) ⫫ x_k`.
pub fn triad_p_value(i: usize, j: usize, k: usize, data: &DomainDataset, cfg: &IndependenceTestConfig) -> Result<f64> {
    let p = data.n_vars();
    if i >= p || j >= p || k >= p {
        return Err(Error::InvalidInput(format!("triple ({i}, {j}, {k}) out of range for {p} variables")));
    }
    if i == j || j == k || i == k {
        return Err(Error::InvalidInput(format!("triple ({i}, {j}, {k}) must be distinct")));
    }
    let (xi, xj, xk) = (row(data, i), row(data, j), row(data, k));
    let correlated = |a: &[f64], b: &[f64]| corr(a, b).abs() > CORRELATION_THRESHOLD;
    if !(correlated(&xi, &xj) && correlated(&xj, &xk) && correlated(&xi, &xk)) {
        return Err(Error::UncorrelatedTriple { i, j, k });
    }
    let e = pseudo_residual(&xi, &xj, &xk)?;
    independence_test(&e, &xk, cfg)
}

/// Whether `{x_i, x_j}` and `{x_k}` violate the Triad constraint.
pub fn triad_violated(i: usize, j: usize, k: usize, data: &DomainDataset, cfg: &IndependenceTestConfig) -> Result<bool> {
    Ok(triad_p_value(i, j, k, data, cfg)? < cfg.alpha)
}

/// Groups observed variables into latent clusters from pure-compatible pairs.
///
/// A correlated pair `{i, j}` is pure-compatible when neither `(i, j | k)`
/// nor `(j, i | k)` violates the Triad constraint for any other variable `k`
/// correlated with both. Clusters are the connected components of the
/// compatibility graph with at least two members.
pub fn locate_clusters(data: &DomainDataset, cfg: &IndependenceTestConfig) -> Result<ClusterSpec> {
    cfg.validate()?;
    let p = data.n_vars();
    let rows: Vec<Vec<f64>> = (0..p).map(|i| row(data, i)).collect();
    let mut correlated = vec![vec![false; p]; p];
    for i in 0..p {
        for j in (i + 1)..p {
            let c = corr(&rows[i], &rows[j]).abs() > CORRELATION_THRESHOLD;
            correlated[i][j] = c;
            correlated[j][i] = c;
        }
    }
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .filter(|&(i, j)| correlated[i][j])
        .collect();

    let compatible: Vec<bool> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<bool> {
            for k in (0..p).filter(|&k| k != i && k != j && correlated[i][k] && correlated[j][k]) {
                for (a, b) in [(i, j), (j, i)] {
                    let e = match pseudo_residual(&rows[a], &rows[b], &rows[k]) {
                        Ok(e) => e,
                        Err(Error::DegenerateReference { .. }) => continue,
                        Err(e) => return Err(e),
                    };
                    if independence_test(&e, &rows[k], cfg)? < cfg.alpha {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        })
        .collect::<Result<Vec<_>>>()?;

    // union-find over compatible pairs
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut any = false;
    for (&(i, j), &ok) in pairs.iter().zip(&compatible) {
        if ok {
            any = true;
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    if !any {
        return Err(Error::NoClustersFound);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; p];
    for i in 0..p {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups.retain(|g| g.len() >= 2);
    ClusterSpec::new(groups, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    C1ToC2,
    C2ToC1,
    Undecided,
}

/// Decides the causal direction between the latents behind two clusters.
///
/// Each configuration takes one indicator `x_i` of the candidate cause and an
/// ordered pair `x_j, x_k` of the candidate effect; with a true edge
/// `cause → effect` the configuration violates the Triad constraint while the
/// mirrored one does not. Per-configuration decisions are combined by
/// plurality; a tie between the two directions goes to the side with the
/// larger mean p-value gap.
pub fn pairwise_direction(c1: &[usize], c2: &[usize], data: &DomainDataset, cfg: &IndependenceTestConfig) -> Result<Direction> {
    if c1.len() < 2 || c2.len() < 2 {
        return Err(Error::InvalidInput("both clusters need at least 2 indicators".into()));
    }
    let forward = side_p_values(c1, c2, data, cfg)?;
    let mirrored = side_p_values(c2, c1, data, cfg)?;
    if forward.is_empty() || mirrored.is_empty() {
        return Ok(Direction::Undecided);
    }
    let rounds = forward.len().max(mirrored.len());
    let (mut to2, mut to1, mut undecided) = (0usize, 0usize, 0usize);
    for r in 0..rounds {
        let f = forward[r % forward.len()] < cfg.alpha;
        let m = mirrored[r % mirrored.len()] < cfg.alpha;
        match (f, m) {
            (true, false) => to2 += 1,
            (false, true) => to1 += 1,
            _ => undecided += 1,
        }
    }
    let top = to2.max(to1);
    if top == 0 || top < undecided {
        return Ok(Direction::Undecided);
    }
    if to2 != to1 {
        return Ok(if to2 > to1 { Direction::C1ToC2 } else { Direction::C2ToC1 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&mirrored) - mean(&forward);
    Ok(if gap > 0.0 {
        Direction::C1ToC2
    } else if gap < 0.0 {
        Direction::C2ToC1
    } else {
        Direction::Undecided
    })
}

/// p-values of every `{x_i ∈ cause; x_j, x_k ∈ effect}` configuration whose
/// triple is correlated.
fn side_p_values(cause: &[usize], effect: &[usize], data: &DomainDataset, cfg: &IndependenceTestConfig) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &i in cause {
        for &j in effect {
            for &k in effect {
                if j == k {
                    continue;
                }
                match triad_p_value(i, j, k, data, cfg) {
                    Ok(p) => out.push(p),
                    Err(Error::UncorrelatedTriple { .. } | Error::DegenerateReference { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}
