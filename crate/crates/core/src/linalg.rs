//! Small dense linear-algebra helpers used throughout: symmetric eigenvalue
//! bounds, condition numbers, and central finite differences.

use nalgebra::{DMatrix, DVector};

/// Symmetric part `(A + Aᵀ)/2`.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Minimum eigenvalue of the symmetric part of `a`.
pub fn min_eig_sym(a: &DMatrix<f64>) -> f64 {
    sym_part(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Maximum eigenvalue of the symmetric part of `a`.
pub fn max_eig_sym(a: &DMatrix<f64>) -> f64 {
    sym_part(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum and maximum eigenvalues of the symmetric part of `a`.
pub fn eig_range_sym(a: &DMatrix<f64>) -> (f64, f64) {
    let eigs = sym_part(a).symmetric_eigenvalues();
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// 2-norm condition number via singular values. Returns `f64::INFINITY` for a
/// singular matrix.
pub fn cond_2(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Largest absolute asymmetry `max |A_ij − A_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Central-difference step near coordinate value `x`: `cbrt(ε)·max(1, |x|)`,
/// the standard choice for second-order accurate central differences.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function of `q`.
pub fn central_gradient<F>(f: F, q: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = q.len();
    let mut grad = DVector::zeros(n);
    let mut qp = q.clone();
    for k in 0..n {
        let h = fd_step(q[k]);
        qp[k] = q[k] + h;
        let fp = f(&qp);
        qp[k] = q[k] - h;
        let fm = f(&qp);
        qp[k] = q[k];
        grad[k] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central-difference partials `∂A/∂q_k` of a matrix function of `q`.
pub fn central_matrix_partials<F>(f: F, q: &DVector<f64>) -> Vec<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = q.len();
    let mut out = Vec::with_capacity(n);
    let mut qp = q.clone();
    for k in 0..n {
        let h = fd_step(q[k]);
        qp[k] = q[k] + h;
        let ap = f(&qp);
        qp[k] = q[k] - h;
        let am = f(&qp);
        qp[k] = q[k];
        out.push((ap - am) / (2.0 * h));
    }
    out
}
