//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Sample covariance (divisor `n − 1`) of a variables × samples matrix.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / n as f64;
        row.add_scalar_mut(-mean);
    }
    let denom = (n.max(2) - 1) as f64;
    (&centered * centered.transpose()) / denom
}

/// Sample covariance of two equal-length series.
pub fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

/// Pearson correlation of two equal-length series; 0 when either is constant.
pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let sab = cov(a, b);
    let saa = cov(a, a);
    let sbb = cov(b, b);
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Inverse of a symmetric positive definite matrix, or `None` when its
/// smallest eigenvalue is below `tol` (relative to the largest).
pub fn spd_inverse(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.amax();
    let min = eig.min();
    if !(min > tol * max.max(1.0)) {
        return None;
    }
    a.clone().cholesky().map(|c| c.inverse())
}

/// Left pseudo-inverse `(AᵀA)⁻¹Aᵀ` and `(AᵀA)⁻¹` of a full-column-rank matrix.
pub fn left_pinv(a: &DMatrix<f64>, tol: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let gram = a.transpose() * a;
    let gram_inv = spd_inverse(&gram, tol)?;
    Some((&gram_inv * a.transpose(), gram_inv))
}

/// Smallest singular value.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().min()
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unflatten(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Topological order of the directed graph with edge `j → i` whenever
/// `b[(i, j)] != 0` (off-diagonal), or `None` if it has a cycle.
pub fn topological_order(b: &DMatrix<f64>) -> Option<Vec<usize>> {
    let q = b.nrows();
    let mut indeg: Vec<usize> = (0..q)
        .map(|i| (0..q).filter(|&j| j != i && b[(i, j)] != 0.0).count())
        .collect();
    let mut order = Vec::with_capacity(q);
    let mut ready: Vec<usize> = (0..q).filter(|&i| indeg[i] == 0).collect();
    while let Some(j) = ready.pop() {
        order.push(j);
        for i in 0..q {
            if i != j && b[(i, j)] != 0.0 {
                indeg[i] -= 1;
                if indeg[i] == 0 {
                    ready.push(i);
                }
            }
        }
    }
    // self-loops count as cycles
    let has_self_loop = (0..q).any(|i| b[(i, i)] != 0.0);
    (order.len() == q && !has_self_loop).then_some(order)
}
