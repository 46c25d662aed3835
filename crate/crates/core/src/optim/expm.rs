use nalgebra::DMatrix;

// [6/6] Padé coefficients c_k = (12 − k)! 6! / (12! k! (6 − k)!)
const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// Largest 1-norm handled by the Padé core without further scaling.
const THETA: f64 = 0.5;

/// Matrix exponential by scaling and squaring around a [6/6] Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA {
        (norm / THETA).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let even = &id * PADE6[0] + &a2 * PADE6[2] + &a4 * PADE6[4] + &a6 * PADE6[6];
    let odd = &scaled * (&id * PADE6[1] + &a2 * PADE6[3] + &a4 * PADE6[5]);
    let num = &even + &odd;
    let den = &even - &odd;
    let mut r = den.lu().solve(&num).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
    }

    #[test]
    fn exp_of_swap_matrix_is_cosh_sinh() {
        let a = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]);
        let e = expm(&a);
        assert!((e[(0, 0)] - 1f64.cosh()).abs() < 1e-14);
        assert!((e[(0, 1)] - 1f64.sinh()).abs() < 1e-14);
    }

    #[test]
    fn agrees_with_reference_on_larger_norms() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 2.0, 0.0, 3.0, 0.5, 1.0, 0.2, 4.0, 0.3]);
        let reference = a.clone().exp();
        let ours = expm(&a);
        let rel = (&ours - &reference).amax() / reference.amax();
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0, 3.5]));
        let e = expm(&a);
        for (i, v) in [1.0f64, -2.0, 3.5].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() / v.exp() < 1e-13);
        }
    }
}
