//! Weighted projection onto a polyhedron `{z : A z ≤ b}`.
//!
//! Solves
//!
//! ```text
//! minimize (z − z_u)ᵀ W (z − z_u)   subject to   A z ≤ b
//! ```
//!
//! with a dual active-set method (Goldfarb–Idnani). The method starts at the
//! unconstrained minimizer `z_u` with an empty working set, repeatedly adds
//! the most violated constraint, and drops working constraints whose
//! multipliers would turn negative. It only ever needs `W⁻¹`, so the filter
//! can hand it a covariance matrix directly.
//!
//! Once the active rows `Ā` are known the solution has the closed form
//! `z = z_u − γ (Ā z_u − b̄)` with `γ = W⁻¹Āᵀ(ĀW⁻¹Āᵀ)⁻¹`, which is what
//! [`ProjectionResult`] reports.

use nalgebra::Cholesky;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Dual feasibility tolerance for the reported multipliers.
pub const DUAL_TOL: f64 = 1e-9;

/// Largest constraint count accepted by [`brute_force_project`].
pub const BRUTE_FORCE_MAX_ROWS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Projected point.
    pub z: Vector,
    /// Indices of the active rows, ascending.
    pub active: Vec<usize>,
    /// `W⁻¹Āᵀ(ĀW⁻¹Āᵀ)⁻¹` for the active rows; `q × 0` when nothing is active.
    pub gamma: Matrix,
    /// Multipliers of the active rows for the objective as written, i.e.
    /// `2W(z − z_u) + Āᵀλ = 0`.
    pub multipliers: Vector,
}

impl ProjectionResult {
    fn passthrough(z_u: &Vector) -> Self {
        ProjectionResult {
            z: z_u.clone(),
            active: Vec::new(),
            gamma: Matrix::zeros(z_u.len(), 0),
            multipliers: Vector::zeros(0),
        }
    }

    /// The active rows `Ā` of `a`.
    pub fn active_rows(&self, a: &Matrix) -> Matrix {
        linalg::select_rows(a, &self.active)
    }

    /// `(z − z_u)ᵀ W (z − z_u)`.
    pub fn objective(&self, z_u: &Vector, w: &Matrix) -> f64 {
        objective(&self.z, z_u, w)
    }
}

pub fn objective(z: &Vector, z_u: &Vector, w: &Matrix) -> f64 {
    let e = z - z_u;
    (e.transpose() * w * &e)[(0, 0)]
}

fn check_problem(z_u: &Vector, metric: &Matrix, a: &Matrix, b: &Vector) -> Result<()> {
    let q = z_u.len();
    dim_check(metric.shape() == (q, q), || {
        format!("weight is {:?}, expected {q}×{q}", metric.shape())
    })?;
    dim_check(a.ncols() == q, || {
        format!("constraint matrix has {} columns, expected {q}", a.ncols())
    })?;
    dim_check(a.nrows() == b.len(), || {
        format!("{} constraint rows but {} bounds", a.nrows(), b.len())
    })?;
    Ok(())
}

/// Projects `z_u` onto `{A z ≤ b}` in the metric of the SPD weight `w`.
pub fn project(z_u: &Vector, w: &Matrix, a: &Matrix, b: &Vector) -> Result<ProjectionResult> {
    check_problem(z_u, w, a, b)?;
    if linalg::asymmetry(w) > 1e-10 * (1.0 + w.amax()) {
        return Err(Error::Argument("weight matrix is not symmetric".into()));
    }
    let w_inv = linalg::spd_inverse(w, "weight matrix")
        .map_err(|_| Error::Argument("weight matrix is not positive definite".into()))?;
    solve(z_u, &w_inv, a, b)
}

/// Same as [`project`] with `W = cov⁻¹`, without ever forming the inverse.
///
/// `cov` must be symmetric positive definite.
pub fn project_with_covariance(
    z_u: &Vector,
    cov: &Matrix,
    a: &Matrix,
    b: &Vector,
) -> Result<ProjectionResult> {
    check_problem(z_u, cov, a, b)?;
    if !linalg::is_pd(cov) {
        return Err(Error::Argument(
            "covariance metric is not positive definite".into(),
        ));
    }
    solve(z_u, cov, a, b)
}

/// Some point of `{A z ≤ b}`, or [`Error::Infeasible`].
pub fn feasible_point(a: &Matrix, b: &Vector) -> Result<Vector> {
    let q = a.ncols();
    dim_check(a.nrows() == b.len(), || {
        format!("{} constraint rows but {} bounds", a.nrows(), b.len())
    })?;
    solve(&Vector::zeros(q), &Matrix::identity(q, q), a, b).map(|r| r.z)
}

fn feas_tol(b: &Vector) -> f64 {
    1e-9 * (1.0 + b.amax())
}

/// Dual active-set iteration. `w_inv` is the inverse weight (the covariance).
fn solve(z_u: &Vector, w_inv: &Matrix, a: &Matrix, b: &Vector) -> Result<ProjectionResult> {
    let s = a.nrows();
    let q = z_u.len();
    if s == 0 {
        return Ok(ProjectionResult::passthrough(z_u));
    }
    let tol = feas_tol(b);
    let cap = 10 * (s + q);

    let mut z = z_u.clone();
    let mut working: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    loop {
        // Most violated constraint outside the working set; lowest index wins ties.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..s {
            if working.contains(&i) {
                continue;
            }
            let slack = b[i] - a.row(i).dot(&z.transpose());
            if slack < -tol && pick.is_none_or(|(_, best)| slack < best) {
                pick = Some((i, slack));
            }
        }
        let Some((p, _)) = pick else { break };
        // Constraint p in ≥ form: n_pᵀz ≥ −b_p with n_p = −a_p.
        let n_p: Vector = -a.row(p).transpose();
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::NoConvergence { cap });
            }
            let h_np = w_inv * &n_p;
            let (dz, r) = if working.is_empty() {
                (h_np.clone(), Vector::zeros(0))
            } else {
                let n_mat = -linalg::select_rows(a, &working).transpose();
                let h_n = w_inv * &n_mat;
                let gram = n_mat.transpose() * &h_n;
                let chol = Cholesky::new(linalg::symmetrize(&gram)).ok_or_else(|| {
                    Error::Numerical("working-set normals became dependent".into())
                })?;
                let r = chol.solve(&(n_mat.transpose() * &h_np));
                (&h_np - &h_n * &r, r)
            };

            // Partial step: largest move keeping working multipliers nonnegative.
            let r_tol = 1e-12 * (1.0 + r.amax());
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > r_tol {
                    let t = u[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(j);
                    }
                }
            }

            // Full step: makes constraint p tight.
            let curvature = n_p.dot(&dz);
            let reference = n_p.dot(&h_np).abs().max(f64::MIN_POSITIVE);
            let slack_p = b[p] - a.row(p).dot(&z.transpose());
            let t2 = if curvature <= 1e-12 * reference {
                f64::INFINITY
            } else {
                -slack_p / curvature
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }

            for (j, uj) in u.iter_mut().enumerate() {
                *uj -= t * r[j];
            }
            u_p += t;
            if t2.is_finite() {
                z += &dz * t;
            }

            if t2 <= t1 {
                working.push(p);
                u.push(u_p);
                break;
            }
            let j = drop_at.expect("finite partial step has a blocking index");
            working.remove(j);
            u.remove(j);
        }
    }

    finish(z_u, w_inv, a, b, working, z)
}

/// Recomputes the solution and multipliers from the identified active set
/// using the closed form, so the reported point is exactly
/// `z_u − γ(Ā z_u − b̄)`.
fn finish(
    z_u: &Vector,
    w_inv: &Matrix,
    a: &Matrix,
    b: &Vector,
    mut active: Vec<usize>,
    z_iter: Vector,
) -> Result<ProjectionResult> {
    if active.is_empty() {
        return Ok(ProjectionResult::passthrough(z_u));
    }
    active.sort_unstable();
    let a_bar = linalg::select_rows(a, &active);
    let b_bar = linalg::select_entries(b, &active);
    let gram = &a_bar * w_inv * a_bar.transpose();
    let gram_inv = linalg::spd_inverse(&gram, "active-set Gram matrix")?;
    let gamma = w_inv * a_bar.transpose() * &gram_inv;
    let excess = &a_bar * z_u - &b_bar;
    let z = z_u - &gamma * &excess;
    let multipliers = (&gram_inv * &excess) * 2.0;
    // Keep the iterate if the closed form is somehow worse (it should not be).
    let z = if a.nrows() > 0 && max_violation(a, b, &z) > max_violation(a, b, &z_iter) + feas_tol(b)
    {
        z_iter
    } else {
        z
    };
    Ok(ProjectionResult {
        z,
        active,
        gamma,
        multipliers,
    })
}

fn max_violation(a: &Matrix, b: &Vector, z: &Vector) -> f64 {
    (a * z - b)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `γ = cov Āᵀ(Ā cov Āᵀ)⁻¹`, after discarding rows of `Ā` that are linearly
/// dependent on earlier picks. Returns `γ` and the indices of the kept rows.
///
/// Rows are chosen greedily by largest remaining norm in the `cov` metric
/// (pivoted Gram–Schmidt on `Ā cov^{1/2}`).
pub fn gain(cov: &Matrix, a_bar: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let q = cov.nrows();
    dim_check(cov.ncols() == q && a_bar.ncols() == q, || {
        format!(
            "covariance {:?} incompatible with active rows {:?}",
            cov.shape(),
            a_bar.shape()
        )
    })?;
    let r = a_bar.nrows();
    if r == 0 {
        return Ok((Matrix::zeros(q, 0), Vec::new()));
    }
    let gram = a_bar * cov * a_bar.transpose();
    let kept = independent_rows(&gram);
    if kept.is_empty() {
        return Err(Error::Singular(
            "active constraint rows vanish in the covariance metric".into(),
        ));
    }
    let a_kept = linalg::select_rows(a_bar, &kept);
    let gram_kept = &a_kept * cov * a_kept.transpose();
    let gamma =
        cov * a_kept.transpose() * linalg::spd_inverse(&gram_kept, "active-set Gram matrix")?;
    Ok((gamma, kept))
}

/// Pivoted Cholesky on a PSD Gram matrix; returns the pivot rows, ascending.
fn independent_rows(gram: &Matrix) -> Vec<usize> {
    let r = gram.nrows();
    let scale = (0..r).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return Vec::new();
    }
    let tol = 1e-10 * scale;
    let mut resid: Vec<f64> = (0..r).map(|i| gram[(i, i)]).collect();
    let mut l = Matrix::zeros(r, r);
    let mut picked = Vec::new();
    for col in 0..r {
        let mut best: Option<usize> = None;
        for i in 0..r {
            if picked.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| resid[i] > resid[b]) {
                best = Some(i);
            }
        }
        let Some(piv) = best else { break };
        if resid[piv] <= tol {
            break;
        }
        let d = resid[piv].sqrt();
        l[(piv, col)] = d;
        for i in 0..r {
            if picked.contains(&i) || i == piv {
                continue;
            }
            let mut v = gram[(i, piv)];
            for c in 0..col {
                v -= l[(i, c)] * l[(piv, c)];
            }
            l[(i, col)] = v / d;
            resid[i] -= l[(i, col)] * l[(i, col)];
        }
        picked.push(piv);
    }
    picked.sort_unstable();
    picked
}

/// `(I − γĀ) P (I − γĀ)ᵀ`, symmetrized. Returns `P` itself when `Ā` is empty.
pub fn project_covariance(p: &Matrix, gamma: &Matrix, a_bar: &Matrix) -> Result<Matrix> {
    let q = p.nrows();
    dim_check(p.ncols() == q, || {
        format!("covariance is {:?}, expected square", p.shape())
    })?;
    dim_check(
        gamma.nrows() == q && a_bar.ncols() == q && gamma.ncols() == a_bar.nrows(),
        || {
            format!(
                "gamma {:?} and active rows {:?} incompatible with {q}×{q} covariance",
                gamma.shape(),
                a_bar.shape()
            )
        },
    )?;
    if a_bar.nrows() == 0 {
        return Ok(p.clone());
    }
    let k = Matrix::identity(q, q) - gamma * a_bar;
    Ok(linalg::symmetrize(&(&k * p * k.transpose())))
}

/// Enumeration oracle for [`project`]: tries every subset of rows as the
/// active set, solves the equality-constrained KKT system directly, keeps
/// primal- and dual-feasible points, and returns the one with the smallest
/// objective.
///
/// Only meant for checking; refuses more than [`BRUTE_FORCE_MAX_ROWS`] rows.
pub fn brute_force_project(
    z_u: &Vector,
    w: &Matrix,
    a: &Matrix,
    b: &Vector,
) -> Result<ProjectionResult> {
    check_problem(z_u, w, a, b)?;
    let s = a.nrows();
    let q = z_u.len();
    if s > BRUTE_FORCE_MAX_ROWS {
        return Err(Error::Argument(format!(
            "brute-force projection limited to {BRUTE_FORCE_MAX_ROWS} rows, got {s}"
        )));
    }
    if !linalg::is_pd(w) {
        return Err(Error::Argument(
            "weight matrix is not positive definite".into(),
        ));
    }
    let tol = feas_tol(b);
    let mut best: Option<(f64, Vec<usize>, Vector, Vector)> = None;
    for mask in 0u32..(1u32 << s) {
        let rows: Vec<usize> = (0..s).filter(|i| mask & (1 << i) != 0).collect();
        let r = rows.len();
        // [2W  Āᵀ] [z]   [2W z_u]
        // [Ā   0 ] [λ] = [b̄    ]
        let mut kkt = Matrix::zeros(q + r, q + r);
        let mut rhs = Vector::zeros(q + r);
        kkt.view_mut((0, 0), (q, q)).copy_from(&(w * 2.0));
        rhs.rows_mut(0, q).copy_from(&(w * z_u * 2.0));
        for (j, &i) in rows.iter().enumerate() {
            for c in 0..q {
                kkt[(q + j, c)] = a[(i, c)];
                kkt[(c, q + j)] = a[(i, c)];
            }
            rhs[q + j] = b[i];
        }
        if r > 0 && linalg::rank(&linalg::select_rows(a, &rows)) < r {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, q).into_owned();
        let lambda = sol.rows(q, r).into_owned();
        if lambda.iter().any(|&l| l < -DUAL_TOL) {
            continue;
        }
        if max_violation(a, b, &z) > tol {
            continue;
        }
        let obj = objective(&z, z_u, w);
        let better = match &best {
            None => true,
            Some((o, ..)) => obj < *o - 1e-14 * (1.0 + o.abs()),
        };
        if better {
            best = Some((obj, rows, z, lambda));
        }
    }
    let (_, active, z, multipliers) = best.ok_or(Error::Infeasible)?;
    let gamma = if active.is_empty() {
        Matrix::zeros(q, 0)
    } else {
        let w_inv = linalg::spd_inverse(w, "weight matrix")?;
        let a_bar = linalg::select_rows(a, &active);
        let gram = &a_bar * &w_inv * a_bar.transpose();
        &w_inv * a_bar.transpose() * linalg::spd_inverse(&gram, "active-set Gram matrix")?
    };
    Ok(ProjectionResult {
        z,
        active,
        gamma,
        multipliers,
    })
}

/// First-order optimality summary of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub primal_feasible: bool,
    pub dual_feasible: bool,
    /// `‖2W(z − z_u) + Āᵀλ‖∞` relative to `1 + ‖2W z_u‖∞`.
    pub stationarity: f64,
    /// Largest `|a_i·z − b_i|` over active rows.
    pub complementarity: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.primal_feasible
            && self.dual_feasible
            && self.stationarity <= tol
            && self.complementarity <= tol
    }
}

pub fn kkt_report(
    res: &ProjectionResult,
    z_u: &Vector,
    w: &Matrix,
    a: &Matrix,
    b: &Vector,
) -> KktReport {
    let tol = feas_tol(b);
    let a_bar = res.active_rows(a);
    let grad = w * (&res.z - z_u) * 2.0 + a_bar.transpose() * &res.multipliers;
    let scale = 1.0 + (w * z_u * 2.0).amax();
    let complementarity = res
        .active
        .iter()
        .map(|&i| (a.row(i).dot(&res.z.transpose()) - b[i]).abs())
        .fold(0.0, f64::max);
    KktReport {
        primal_feasible: a.nrows() == 0 || max_violation(a, b, &res.z) <= tol,
        dual_feasible: res.multipliers.iter().all(|&l| l >= -DUAL_TOL),
        stationarity: grad.amax() / scale,
        complementarity,
    }
}
