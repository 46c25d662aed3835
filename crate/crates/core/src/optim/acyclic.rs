use nalgebra::DMatrix;

use super::expm::expm;
use crate::error::{Error, Result};

/// Entries of `B∘B` above this are refused to keep the exponential finite.
pub const ENTRY_CAP: f64 = 20.0;

/// `h(B) = tr(exp(B∘B)) − q`; zero exactly when the support of `B` is acyclic.
pub fn acyclicity_h(b: &DMatrix<f64>) -> Result<f64> {
    let e = exp_hadamard_square(b)?;
    Ok(e.trace() - b.nrows() as f64)
}

/// Gradient of [`acyclicity_h`]: `exp(B∘B)ᵀ ∘ 2B`.
pub fn acyclicity_grad(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    acyclicity_with_grad(b).map(|(_, g)| g)
}

pub fn acyclicity_with_grad(b: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let e = exp_hadamard_square(b)?;
    let h = e.trace() - b.nrows() as f64;
    let grad = e.transpose().component_mul(b) * 2.0;
    Ok((h, grad))
}

fn exp_hadamard_square(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert_eq!(b.nrows(), b.ncols(), "acyclicity needs a square matrix");
    let sq = b.component_mul(b);
    let max = sq.iter().copied().fold(0.0, f64::max);
    if !(max <= ENTRY_CAP) {
        return Err(Error::OverflowRisk(max));
    }
    Ok(expm(&sq))
}
