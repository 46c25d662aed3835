//! Synthetic benchmark generator: random DAGs among latent factors,
//! non-Gaussian external influences, pure measurement models, and
//! multi-domain replication with a shared graph.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{standardize_rows, DomainDataset, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::triad::ClusterSpec;

pub const SUB_GAUSSIAN_EXPONENT: (f64, f64) = (0.5, 0.8);
pub const SUPER_GAUSSIAN_EXPONENT: (f64, f64) = (1.2, 2.0);

/// Distribution of the external influences of the latent factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDist {
    #[default]
    Laplace,
    /// `sign(z)|z|^e` with `e` drawn from [`SUB_GAUSSIAN_EXPONENT`].
    SubGaussian,
    /// `sign(z)|z|^e` with `e` drawn from [`SUPER_GAUSSIAN_EXPONENT`].
    SuperGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub q: usize,
    pub indicators_per_factor: usize,
    pub n: usize,
    /// Edge magnitudes are uniform on this range with a random sign.
    pub weight_range: (f64, f64),
    /// Loading magnitudes are uniform on this range with a random sign.
    pub loading_range: (f64, f64),
    /// Share of each observed variable's variance due to measurement error.
    pub noise_ratio: f64,
    pub noise_dist: NoiseDist,
    /// Expected number of edges.
    pub edge_density: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            q: 5,
            indicators_per_factor: 2,
            n: 1000,
            weight_range: (0.5, 2.0),
            loading_range: (0.2, 0.7),
            noise_ratio: 0.1,
            noise_dist: NoiseDist::Laplace,
            edge_density: 5.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Defaults with `q` factors and an expected `q` edges.
    pub fn with_q(q: usize) -> Self {
        Self {
            q,
            edge_density: q as f64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if self.q == 0 {
            return Err(Error::InvalidInput("q must be at least 1".into()));
        }
        if self.indicators_per_factor < 2 {
            return Err(Error::InvalidInput("every factor needs at least 2 indicators".into()));
        }
        if self.n < 3 {
            return Err(Error::InvalidInput("n must be at least 3".into()));
        }
        if !range_ok(self.weight_range) || !range_ok(self.loading_range) {
            return Err(Error::InvalidInput("weight and loading ranges must be positive and ordered".into()));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return Err(Error::InvalidInput(format!("noise_ratio must lie in [0, 1), got {}", self.noise_ratio)));
        }
        if !(self.edge_density >= 0.0) {
            return Err(Error::InvalidInput("edge_density must be >= 0".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.q * self.indicators_per_factor
    }
}

/// Generated model parameters and data for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Effects among the unit-variance factors, `D⁻¹ B D` with `D` the
    /// factor standard deviations before rescaling.
    pub b_true: DMatrix<f64>,
    /// Effects used to generate the factors.
    pub b_raw: DMatrix<f64>,
    /// Drawn loadings (p × q); the data use `√(1−r)·sign(g)` after row normalization.
    pub g_true: DMatrix<f64>,
    pub clusters: ClusterSpec,
    /// Factor values (q × n), rows with unit sample variance.
    pub factors: DMatrix<f64>,
    /// Observed data (p × n).
    pub observed: DMatrix<f64>,
}

impl GroundTruth {
    pub fn dataset(&self, domain_id: usize) -> Result<DomainDataset> {
        DomainDataset::unnamed(self.observed.clone(), domain_id)
    }
}

/// Independent RNG stream `id` under `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_SUPPORT: u64 = 0;
const STREAM_DOMAIN: u64 = 100;

fn signed_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Random DAG support: 0/1 matrix strictly lower triangular under a hidden
/// uniform permutation, each of the `q(q−1)/2` admissible edges present with
/// probability `edge_density / (q(q−1)/2)`.
fn dag_support(q: usize, edge_density: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(rng);
    let slots = (q * q.saturating_sub(1) / 2) as f64;
    let prob = if slots > 0.0 { (edge_density / slots).clamp(0.0, 1.0) } else { 0.0 };
    let mut s = DMatrix::zeros(q, q);
    for a in 0..q {
        for b in (a + 1)..q {
            if rng.random_bool(prob) {
                // earlier in the order causes later
                s[(order[b], order[a])] = 1.0;
            }
        }
    }
    s
}

fn weight_support(support: &DMatrix<f64>, range: (f64, f64), rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    support.map(|v| if v != 0.0 { signed_uniform(rng, range) } else { 0.0 })
}

/// Weighted Erdős–Rényi DAG with `edge_density` expected edges.
pub fn gen_dag(q: usize, edge_density: f64, weight_range: (f64, f64), seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, STREAM_SUPPORT);
    let s = dag_support(q, edge_density, &mut rng);
    weight_support(&s, weight_range, &mut rng)
}

fn draw_noise(dist: NoiseDist, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = match dist {
        NoiseDist::Laplace => (0..n)
            .map(|_| {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                a - b
            })
            .collect(),
        NoiseDist::SubGaussian | NoiseDist::SuperGaussian => {
            let (lo, hi) = if dist == NoiseDist::SubGaussian {
                SUB_GAUSSIAN_EXPONENT
            } else {
                SUPER_GAUSSIAN_EXPONENT
            };
            let e = rng.random_range(lo..=hi);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z.signum() * z.abs().powf(e)
                })
                .collect()
        }
    };
    standardize_vec(raw)
}

fn standardize_vec(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    for x in &mut v {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
    v
}

/// `n` i.i.d. draws standardized to zero sample mean and unit sample variance.
pub fn gen_noise(dist: NoiseDist, n: usize, seed: u64) -> Vec<f64> {
    draw_noise(dist, n, &mut stream(seed, 0))
}

fn latents_from(b: &DMatrix<f64>, dist: NoiseDist, n: usize, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = b.nrows();
    let mut e = DMatrix::zeros(q, n);
    for i in 0..q {
        let row = draw_noise(dist, n, rng);
        e.row_mut(i).copy_from_slice(&row);
    }
    let inv = (DMatrix::identity(q, q) - b)
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("I − B is singular; B must be acyclic".into()))?;
    let f = inv * e;
    let sd: Vec<f64> = (0..q)
        .map(|i| {
            let r: Vec<f64> = f.row(i).iter().copied().collect();
            crate::linalg::cov(&r, &r).sqrt()
        })
        .collect();
    let f = standardize_rows(&f)?;
    let b_std = DMatrix::from_fn(q, q, |i, j| b[(i, j)] * sd[j] / sd[i]);
    Ok((f, b_std))
}

/// `F = (I − B)⁻¹ E` with rows rescaled to unit sample variance.
pub fn gen_latents(b_true: &DMatrix<f64>, noise_dist: NoiseDist, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    latents_from(b_true, noise_dist, n, &mut stream(seed, 0)).map(|(f, _)| f)
}

fn observed_from(f: &DMatrix<f64>, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<(DMatrix<f64>, DMatrix<f64>, ClusterSpec)> {
    let (q, n) = f.shape();
    let k = cfg.indicators_per_factor;
    let p = q * k;
    let mut g = DMatrix::zeros(p, q);
    let mut x = DMatrix::zeros(p, n);
    let signal = (1.0 - cfg.noise_ratio).sqrt();
    let noise = cfg.noise_ratio.sqrt();
    let mut clusters = Vec::with_capacity(q);
    for j in 0..q {
        let mut members = Vec::with_capacity(k);
        for r in 0..k {
            let i = j * k + r;
            let loading = signed_uniform(rng, cfg.loading_range);
            g[(i, j)] = loading;
            members.push(i);
            // a pure row normalizes to sign(g)·f, which already has unit variance
            let s = loading.signum() * signal;
            for t in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                x[(i, t)] = s * f[(j, t)] + noise * e;
            }
        }
        clusters.push(members);
    }
    Ok((x, g, ClusterSpec::new(clusters, p)?))
}

/// Observed indicators for factor values `f`: each variable is
/// `√(1−r)·sign(g)·f_j + √r·e` with Gaussian `e`.
pub fn gen_observed(f: &DMatrix<f64>, cfg: &GenConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, ClusterSpec)> {
    cfg.validate()?;
    observed_from(f, cfg, &mut stream(cfg.seed, 3))
}

fn domain_truth(support: &DMatrix<f64>, cfg: &GenConfig, domain: u64) -> Result<GroundTruth> {
    let base = STREAM_DOMAIN + 10 * domain;
    let b_raw = weight_support(support, cfg.weight_range, &mut stream(cfg.seed, base));
    let (factors, b_true) = latents_from(&b_raw, cfg.noise_dist, cfg.n, &mut stream(cfg.seed, base + 1))?;
    let (observed, g_true, clusters) = observed_from(&factors, cfg, &mut stream(cfg.seed, base + 2))?;
    Ok(GroundTruth {
        b_true,
        b_raw,
        g_true,
        clusters,
        factors,
        observed,
    })
}

/// One single-domain benchmark instance.
pub fn simulate(cfg: &GenConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let support = dag_support(cfg.q, cfg.edge_density, &mut stream(cfg.seed, STREAM_SUPPORT));
    domain_truth(&support, cfg, 0)
}

/// `m` domains; with `shared_graph` the edge support is drawn once and every
/// domain redraws its weights, loadings, and noise.
pub fn gen_multidomain(m: usize, cfg: &GenConfig, shared_graph: bool) -> Result<(MultiDomainDataset, Vec<GroundTruth>)> {
    cfg.validate()?;
    if m == 0 {
        return Err(Error::InvalidInput("at least one domain is required".into()));
    }
    let shared = dag_support(cfg.q, cfg.edge_density, &mut stream(cfg.seed, STREAM_SUPPORT));
    let mut truths = Vec::with_capacity(m);
    for d in 0..m {
        let support = if shared_graph || d == 0 {
            shared.clone()
        } else {
            dag_support(cfg.q, cfg.edge_density, &mut stream(cfg.seed, STREAM_SUPPORT + 1 + d as u64))
        };
        truths.push(domain_truth(&support, cfg, d as u64)?);
    }
    let domains = truths
        .iter()
        .enumerate()
        .map(|(d, t)| t.dataset(d + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok((MultiDomainDataset::new(domains)?, truths))
}
