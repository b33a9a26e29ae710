//! Dense kernels used by the cache builder and the solver.
//!
//! All arithmetic that matters for complexity claims goes through the counted
//! wrappers here; the uncounted helpers at the bottom are diagnostics only.

use nalgebra::{DMatrix, DVector};

use crate::flops::{record, Class};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `a * b`
pub fn mul(a: &Mat, b: &Mat) -> Mat {
    record(Class::Cubic, 2 * a.nrows() * a.ncols() * b.ncols());
    a * b
}

/// `aᵀ * b`
pub fn tr_mul(a: &Mat, b: &Mat) -> Mat {
    record(Class::Cubic, 2 * a.nrows() * a.ncols() * b.ncols());
    a.tr_mul(b)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &Mat) -> Option<Mat> {
    let n = a.nrows();
    // factorization n³/3 plus the triangular solves against the identity
    record(Class::Cubic, n * n * n + n * n * n / 3);
    let sym = (a + a.transpose()) * 0.5;
    let inv = sym.cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// `y ← alpha·A·x + beta·y`
pub fn gemv(y: &mut Vector, alpha: f64, a: &Mat, x: &Vector, beta: f64) {
    record(Class::Matvec, 2 * a.nrows() * a.ncols());
    y.gemv(alpha, a, x, beta);
}

/// `y ← alpha·Aᵀ·x + beta·y`
pub fn gemv_tr(y: &mut Vector, alpha: f64, a: &Mat, x: &Vector, beta: f64) {
    record(Class::Matvec, 2 * a.nrows() * a.ncols());
    y.gemv_tr(alpha, a, x, beta);
}

/// `y ← y + alpha·x` for matrices of equal shape.
pub fn axpy_mat(y: &mut Mat, alpha: f64, x: &Mat) {
    record(Class::Elementwise, 2 * x.len());
    for (a, b) in y.iter_mut().zip(x.iter()) {
        *a += alpha * b;
    }
}

/// `y ← y + alpha·x`
pub fn axpy(y: &mut Vector, alpha: f64, x: &Vector) {
    record(Class::Elementwise, 2 * x.len());
    y.axpy(alpha, x, 1.0);
}

/// Elementwise `a - b`.
pub fn sub(a: &Mat, b: &Mat) -> Mat {
    record(Class::Elementwise, a.len());
    a - b
}

/// Elementwise `a + b`.
pub fn add(a: &Mat, b: &Mat) -> Mat {
    record(Class::Elementwise, a.len());
    a + b
}

/// Induced infinity norm (maximum absolute row sum).
pub fn norm_inf(a: &Mat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry of a vector.
pub fn vec_norm_inf(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &Mat) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank with singular values below `rel_tol · σ_max` treated as zero.
pub fn rank(a: &Mat, rel_tol: f64) -> usize {
    let sv = a.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// `[B, AB, …, A^{n−1}B]`
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    out
}

pub fn is_symmetric(a: &Mat, rel_tol: f64) -> bool {
    let scale = norm_inf(a).max(f64::MIN_POSITIVE);
    norm_inf(&(a - a.transpose())) <= rel_tol * scale
}
