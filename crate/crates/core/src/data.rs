//! Per-domain observation matrices, standardization, and the block-diagonal
//! augmented coding that embeds several domains into one common space.
//!
//! All matrices are stored variables × samples: row `i` is a variable, column
//! `t` is one observation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rows whose sample variance is at or below this are rejected.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Observations from a single domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    data: DMatrix<f64>,
    variable_names: Vec<String>,
    domain_id: usize,
}

impl DomainDataset {
    pub fn new(data: DMatrix<f64>, variable_names: Vec<String>, domain_id: usize) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "a domain needs at least 2 variables, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 3 {
            return Err(Error::InvalidInput(format!(
                "a domain needs at least 3 samples, got {}",
                data.ncols()
            )));
        }
        if variable_names.len() != data.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} variable names for {} variables",
                variable_names.len(),
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("observations must be finite".into()));
        }
        if domain_id == 0 {
            return Err(Error::InvalidInput("domain ids start at 1".into()));
        }
        Ok(Self {
            data,
            variable_names,
            domain_id,
        })
    }

    /// Builds a dataset with generated names `x1..xp`.
    pub fn unnamed(data: DMatrix<f64>, domain_id: usize) -> Result<Self> {
        let names = (1..=data.nrows()).map(|i| format!("x{i}")).collect();
        Self::new(data, names, domain_id)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn domain_id(&self) -> usize {
        self.domain_id
    }

    pub fn n_vars(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_domain_id(mut self, domain_id: usize) -> Self {
        self.domain_id = domain_id;
        self
    }

    /// Keeps only the listed samples (columns), in the given order.
    pub fn select_samples(&self, columns: &[usize]) -> Result<Self> {
        let data = self.data.select_columns(columns);
        Self::new(data, self.variable_names.clone(), self.domain_id)
    }
}

/// Centers every row and scales it to unit sample variance (divisor `n − 1`).
pub fn standardize(d: &DomainDataset) -> Result<DomainDataset> {
    let data = standardize_rows(d.data())?;
    Ok(DomainDataset {
        data,
        variable_names: d.variable_names.clone(),
        domain_id: d.domain_id,
    })
}

pub(crate) fn standardize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.ncols();
    if n < 2 {
        return Err(Error::InvalidInput("standardization needs at least 2 samples".into()));
    }
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let mean = row.sum() / n as f64;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / (n - 1) as f64;
        if var <= MIN_VARIANCE {
            return Err(Error::ZeroVarianceVariable { index: i });
        }
        row /= var.sqrt();
    }
    Ok(out)
}

/// An ordered collection of domains with ids `1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<DomainDataset>,
    total_p: usize,
    total_n: usize,
}

impl MultiDomainDataset {
    pub fn new(domains: Vec<DomainDataset>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::InvalidInput("at least one domain is required".into()));
        }
        for (pos, d) in domains.iter().enumerate() {
            if d.domain_id != pos + 1 {
                return Err(Error::InvalidInput(format!(
                    "domain at position {} has id {}, expected {}",
                    pos,
                    d.domain_id,
                    pos + 1
                )));
            }
        }
        let total_p = domains.iter().map(DomainDataset::n_vars).sum();
        let total_n = domains.iter().map(DomainDataset::n_samples).sum();
        Ok(Self {
            domains,
            total_p,
            total_n,
        })
    }

    pub fn domains(&self) -> &[DomainDataset] {
        &self.domains
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn total_p(&self) -> usize {
        self.total_p
    }

    pub fn total_n(&self) -> usize {
        self.total_n
    }

    pub fn standardized(&self) -> Result<Self> {
        let domains = self.domains.iter().map(standardize).collect::<Result<Vec<_>>>()?;
        Self::new(domains)
    }
}

/// Origin of an augmented row or column: 1-based domain and 0-based position
/// inside that domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOrigin {
    pub domain: usize,
    pub index: usize,
}

/// Block-diagonal embedding `Diag(X¹, …, Xᴹ)` of a multi-domain dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    data: DMatrix<f64>,
    row_origin: Vec<BlockOrigin>,
    col_origin: Vec<BlockOrigin>,
    variable_names: Vec<Vec<String>>,
}

impl AugmentedDataset {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row_origin(&self) -> &[BlockOrigin] {
        &self.row_origin
    }

    pub fn col_origin(&self) -> &[BlockOrigin] {
        &self.col_origin
    }

    pub fn n_domains(&self) -> usize {
        self.variable_names.len()
    }

    /// Row range `(start, len)` occupied by domain `m` (1-based).
    pub fn row_block(&self, m: usize) -> (usize, usize) {
        block_range(&self.row_origin, m)
    }

    /// Column range `(start, len)` occupied by domain `m` (1-based).
    pub fn col_block(&self, m: usize) -> (usize, usize) {
        block_range(&self.col_origin, m)
    }

    /// Recovers the original domain `m` (1-based).
    pub fn extract(&self, m: usize) -> Result<DomainDataset> {
        if m == 0 || m > self.n_domains() {
            return Err(Error::InvalidInput(format!("no domain {m}")));
        }
        let (r0, nr) = self.row_block(m);
        let (c0, nc) = self.col_block(m);
        let block = self.data.view((r0, c0), (nr, nc)).into_owned();
        DomainDataset::new(block, self.variable_names[m - 1].clone(), m)
    }

    /// Names of every augmented row, prefixed by the domain when `M > 1`.
    pub fn row_names(&self) -> Vec<String> {
        let multi = self.n_domains() > 1;
        self.row_origin
            .iter()
            .map(|o| {
                let name = &self.variable_names[o.domain - 1][o.index];
                if multi {
                    format!("d{}:{}", o.domain, name)
                } else {
                    name.clone()
                }
            })
            .collect()
    }
}

fn block_range(origin: &[BlockOrigin], m: usize) -> (usize, usize) {
    let start = origin.iter().position(|o| o.domain == m).unwrap_or(origin.len());
    let len = origin[start..].iter().take_while(|o| o.domain == m).count();
    (start, len)
}

/// Places each matrix on the diagonal of a larger zero matrix.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    for (m, b) in blocks.iter().enumerate() {
        if b.ncols() == 0 {
            return Err(Error::EmptyDomain { domain: m + 1 });
        }
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    Ok(out)
}

/// Builds the augmented dataset. Domains are expected to be standardized.
pub fn augment(md: &MultiDomainDataset) -> Result<AugmentedDataset> {
    let blocks: Vec<DMatrix<f64>> = md.domains().iter().map(|d| d.data().clone()).collect();
    let data = block_diag(&blocks)?;
    let mut row_origin = Vec::with_capacity(md.total_p());
    let mut col_origin = Vec::with_capacity(md.total_n());
    for d in md.domains() {
        row_origin.extend((0..d.n_vars()).map(|index| BlockOrigin {
            domain: d.domain_id(),
            index,
        }));
        col_origin.extend((0..d.n_samples()).map(|index| BlockOrigin {
            domain: d.domain_id(),
            index,
        }));
    }
    Ok(AugmentedDataset {
        data,
        row_origin,
        col_origin,
        variable_names: md.domains().iter().map(|d| d.variable_names().to_vec()).collect(),
    })
}
