//! Dense least-squares and ridge solves on top of `nalgebra`.
//!
//! Both work on the smaller of the two Gram matrices: `XᵀX` when `X` has at
//! least as many rows as columns, `XXᵀ` otherwise.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

/// Relative eigenvalue cut-off used for pseudo-inverses of Gram matrices.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse of a symmetric positive semi-definite matrix.
pub fn psd_pinv(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max * PINV_RTOL;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = if l > tol { 1.0 / l } else { 0.0 };
        scaled.column_mut(j).scale_mut(s);
    }
    scaled * eig.eigenvectors.transpose()
}

/// Inverse of `G + λI` for symmetric PSD `G` and `λ > 0`, falling back to the
/// pseudo-inverse when the Cholesky factorisation fails numerically.
pub fn regularized_inverse(g: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let mut a = g.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    match Cholesky::new(a.clone()) {
        Some(c) if lambda > 0.0 => c.inverse(),
        _ => psd_pinv(&a),
    }
}

/// Strategy for a batch of regressions sharing one design matrix.
#[derive(Clone, Debug)]
pub enum SharedSolve {
    /// `β = P Xᵀ y` with `P` a `p×p` (pseudo-)inverse of `XᵀX (+λI)`.
    Primal(DMatrix<f64>),
    /// `β = Xᵀ K y` with `K` an `n×n` (pseudo-)inverse of `XXᵀ (+λI)`.
    Dual(DMatrix<f64>),
}

impl SharedSolve {
    /// Minimum-norm least squares (`lambda = None`) or ridge.
    pub fn new(x: &DMatrix<f64>, lambda: Option<f64>) -> Self {
        let (n, p) = x.shape();
        let invert = |g: DMatrix<f64>| match lambda {
            Some(l) if l > 0.0 => regularized_inverse(&g, l),
            _ => psd_pinv(&g),
        };
        if p <= n {
            SharedSolve::Primal(invert(x.tr_mul(x)))
        } else {
            SharedSolve::Dual(invert(x * x.transpose()))
        }
    }

    /// Coefficients (`p × r`) for the `n × r` targets `y`.
    pub fn solve(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SharedSolve::Primal(p) => p * x.tr_mul(y),
            SharedSolve::Dual(k) => x.tr_mul(&(k * y)),
        }
    }
}
