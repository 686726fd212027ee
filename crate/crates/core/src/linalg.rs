//! Small dense linear-algebra helpers shared by the estimator modules.
//!
//! Everything here works on `DMatrix<f64>` / `DVector<f64>`; the systems
//! involved are a few dozen states at most.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Singular values of `m` (empty for zero-sized matrices).
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Numerical rank with threshold `max(rows, cols) · ε · σ_max`.
pub fn rank(m: &Matrix) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Moore–Penrose pseudoinverse; singular values at or below
/// `rtol · σ_max` are treated as zero.
pub fn pinv_rtol(m: &Matrix, rtol: f64) -> Matrix {
    let smax = singular_values(m).into_iter().fold(0.0, f64::max);
    pinv_abs(m, rtol * smax)
}

/// Pseudoinverse with an absolute singular-value cutoff `tol`.
pub fn pinv_abs(m: &Matrix, tol: f64) -> Matrix {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Matrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            let vi = v_t.row(i).transpose();
            let ui = u.column(i).transpose();
            out += (vi * ui) / s;
        }
    }
    out
}

/// Pseudoinverse with the default threshold `max(rows, cols) · ε · σ_max`.
pub fn pinv(m: &Matrix) -> Matrix {
    pinv_rtol(m, m.nrows().max(m.ncols()) as f64 * f64::EPSILON)
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn eig_range(m: &Matrix) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Scale-aware tolerance `1e-10 · ‖m‖` used by the PSD/PD checks.
pub fn psd_tolerance(m: &Matrix) -> f64 {
    1e-10 * m.norm()
}

pub fn is_psd(m: &Matrix) -> bool {
    eig_range(m).0 >= -psd_tolerance(m)
}

pub fn is_pd(m: &Matrix) -> bool {
    m.nrows() == 0 || eig_range(m).0 > psd_tolerance(m)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    symmetrize(m)
        .cholesky()
        .map(|c| symmetrize(&c.inverse()))
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Clips eigenvalues below zero, returning a PSD matrix.
pub fn clip_psd(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    symmetrize(&(&eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()))
}

/// Symmetric square root `V √Λ Vᵀ` of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Block-diagonal stacking of the given matrices.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Rows of `m` selected by `idx`, in that order.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub fn select_entries(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_fn(idx.len(), |i, _| v[idx[i]])
}
