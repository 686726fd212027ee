//! One recursion of the attack-resilient input and state estimator.
//!
//! Each step runs, in order:
//!
//! 1. prediction `x̂_{k|k-1} = A x̂_{k-1|k-1} + B u`,
//! 2. minimum-variance unbiased attack estimate `d̂ᵘ = M (y − C x̂_{k|k-1})`,
//! 3. projection of `d̂ᵘ` onto `𝒜 d ≤ b` in the `(Pᵈᵘ)⁻¹` metric,
//! 4. time update `x̂⋆ = x̂_{k|k-1} + G d̂ᵘ`,
//! 5. measurement update `x̂ᵘ = x̂⋆ + L (y − C x̂⋆)`,
//! 6. projection of `x̂ᵘ` onto `ℬ x ≤ c` in the `(Pˣᵘ)⁻¹` metric.
//!
//! Model matrices indexed `k−1` (`A`, `B`, `G`, `Q`) come from the previous
//! [`SystemStep`], those indexed `k` (`C`, `R`) from the current one.
//!
//! The projected covariances `(I − γĀ) P (I − γĀ)ᵀ` assume the true signal
//! lies on the active constraint boundary. When it lies strictly inside,
//! the projected estimate is biased and the reported covariance is
//! optimistic.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result, Stage};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{ConstraintSet, Inequalities, SystemStep};
use crate::projection;

/// Which attack estimate and covariance feed the time update.
///
/// The state shift `G d` and the covariance term `G P Gᵀ` can each use the
/// unconstrained or the projected attack estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeUpdateAttack {
    /// Shift by `d̂ᵘ`, covariance with `Pᵈᵘ`. The covariance then matches
    /// the actual error of `x̂⋆`.
    #[default]
    Consistent,
    /// Shift by `d̂ᵘ`, covariance with the projected `Pᵈ`. Once the attack
    /// projection is active `R̃⋆` loses positive semi-definiteness along
    /// `C G`, and the step fails in the measurement update.
    #[serde(alias = "literal")]
    Unconstrained,
    /// Shift by `d̂`, covariance with `Pᵈ`.
    Constrained,
}

impl TimeUpdateAttack {
    fn uses_projected_shift(self) -> bool {
        matches!(self, TimeUpdateAttack::Constrained)
    }

    fn uses_projected_covariance(self) -> bool {
        !matches!(self, TimeUpdateAttack::Consistent)
    }
}

/// The point at which state constraints that depend on the estimate (such
/// as a selected disjunct) are built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateConstraintPoint {
    /// The prediction `x̂_{k|k-1}`.
    Predicted,
    /// The measurement-updated `x̂ᵘ_{k|k}`. A selection made at the
    /// prediction can stay on the side the estimate already sits on while
    /// the measurements move to another.
    #[default]
    Updated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub time_update_attack: TimeUpdateAttack,
    pub state_constraint_point: StateConstraintPoint,
}

/// Posterior estimate `x̂_{k|k}` and covariance `Pˣ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub x_hat: Vector,
    pub p_x: Matrix,
    pub k: usize,
}

impl FilterState {
    pub fn new(x_hat: Vector, p_x: Matrix, k: usize) -> Result<Self> {
        let n = x_hat.len();
        dim_check(p_x.shape() == (n, n), || {
            format!("covariance {:?} for state of length {n}", p_x.shape())
        })?;
        if !linalg::all_finite(&p_x) || x_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "filter state has non-finite entries".into(),
            ));
        }
        if !linalg::is_psd(&p_x) {
            return Err(Error::Argument(
                "initial covariance is not positive semi-definite".into(),
            ));
        }
        Ok(FilterState { x_hat, p_x, k })
    }

    /// `x̂₀ = C⁻¹ y₀` when `C` is square and invertible, zero otherwise;
    /// `P₀ = ρ I`.
    pub fn initial(step: &SystemStep, y0: &Vector, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Argument(format!(
                "initial covariance scale must be positive, got {rho}"
            )));
        }
        let n = step.dims().n;
        dim_check(y0.len() == step.dims().l, || {
            format!(
                "measurement of length {}, expected {}",
                y0.len(),
                step.dims().l
            )
        })?;
        let c = step.c();
        let x_hat = if c.is_square() && linalg::rank(c) == n {
            c.clone().lu().solve(y0).unwrap_or_else(|| Vector::zeros(n))
        } else {
            Vector::zeros(n)
        };
        FilterState::new(x_hat, Matrix::identity(n, n) * rho, 0)
    }
}

/// Outputs of the attack estimation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackEstimate {
    pub r_tilde: Matrix,
    pub m: Matrix,
    pub d_hat_u: Vector,
    pub p_du: Matrix,
    pub p_xd: Matrix,
}

/// A projected estimate together with its covariance and active set.
#[derive(Debug, Clone, PartialEq)]
pub struct Constrained {
    pub estimate: Vector,
    pub covariance: Matrix,
    pub gamma: Matrix,
    pub active: Vec<usize>,
    /// Active rows `Ā` (or `ℬ̄`).
    pub rows: Matrix,
}

/// Every intermediate quantity of one filter step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Index of the posterior this step produced (`x̂_{k|k}`).
    pub k: usize,
    pub x_pred: Vector,
    pub p_pred: Matrix,
    pub r_tilde: Matrix,
    pub m: Matrix,
    pub d_hat_u: Vector,
    pub p_du: Matrix,
    pub d_hat: Vector,
    pub p_d: Matrix,
    pub p_xd: Matrix,
    pub gamma_d: Matrix,
    pub active_d: Vec<usize>,
    pub x_star: Vector,
    pub p_star: Matrix,
    pub r_star: Matrix,
    pub l: Matrix,
    pub x_hat_u: Vector,
    pub p_xu: Matrix,
    pub x_hat: Vector,
    pub p_x: Matrix,
    pub gamma_x: Matrix,
    pub active_x: Vec<usize>,
    /// Active state-constraint rows `ℬ̄_k`.
    pub state_rows: Matrix,
}

/// Supplies the constraint set for step `k`. The attack block constrains
/// `d_{k-1}` and the state block constrains `x_k`.
pub trait ConstraintProvider {
    fn constraints(&self, k: usize, x_pred: &Vector, u_prev: &Vector) -> ConstraintSet;
}

impl ConstraintProvider for ConstraintSet {
    fn constraints(&self, _k: usize, _x_pred: &Vector, _u_prev: &Vector) -> ConstraintSet {
        self.clone()
    }
}

pub fn predict(state: &FilterState, prev: &SystemStep, u: &Vector) -> Result<(Vector, Matrix)> {
    let d = prev.dims();
    dim_check(state.x_hat.len() == d.n, || {
        format!("state length {} vs model n = {}", state.x_hat.len(), d.n)
    })?;
    dim_check(u.len() == d.m, || {
        format!("input length {} vs model m = {}", u.len(), d.m)
    })?;
    let a = prev.a();
    let x_pred = a * &state.x_hat + prev.b() * u;
    let p_pred = linalg::symmetrize(&(a * &state.p_x * a.transpose() + prev.q()));
    Ok((x_pred, p_pred))
}

pub fn estimate_attack(
    x_pred: &Vector,
    p_pred: &Matrix,
    p_x_prev: &Matrix,
    prev: &SystemStep,
    cur: &SystemStep,
    y: &Vector,
) -> Result<AttackEstimate> {
    let d = cur.dims();
    dim_check(y.len() == d.l, || {
        format!("measurement length {} vs model l = {}", y.len(), d.l)
    })?;
    dim_check(x_pred.len() == d.n && p_pred.shape() == (d.n, d.n), || {
        "prediction dimensions".into()
    })?;
    let c = cur.c();
    let r_tilde = linalg::symmetrize(&(c * p_pred * c.transpose() + cur.r()));
    let r_tilde_inv = linalg::spd_inverse(&r_tilde, "innovation covariance C P Cᵀ + R")?;
    let cg = c * prev.g();
    let info = linalg::symmetrize(&(cg.transpose() * &r_tilde_inv * &cg));
    let p_du = linalg::spd_inverse(&info, "GᵀCᵀR̃⁻¹CG").map_err(|_| {
        Error::Singular("GᵀCᵀR̃⁻¹CG is singular; rank(C_k G_{k-1}) = p does not hold".into())
    })?;
    let m = &p_du * cg.transpose() * &r_tilde_inv;
    let d_hat_u = &m * (y - c * x_pred);
    let p_xd = -(p_x_prev * prev.a().transpose() * c.transpose() * m.transpose());
    Ok(AttackEstimate {
        r_tilde,
        m,
        d_hat_u,
        p_du,
        p_xd,
    })
}

/// Metric used for the weighted projection: the covariance itself when it is
/// positive definite, else its PSD part plus `ε I` with `ε = 1e-9 · tr(P)/n`.
pub fn projection_metric(cov: &Matrix) -> Matrix {
    if linalg::is_pd(cov) {
        return cov.clone();
    }
    let n = cov.nrows();
    let clipped = linalg::clip_psd(cov);
    let tr = clipped.trace();
    let eps = if tr > 0.0 { 1e-9 * tr / n as f64 } else { 1e-9 };
    clipped + Matrix::identity(n, n) * eps
}

fn constrain(estimate: &Vector, cov: &Matrix, block: &Inequalities) -> Result<Constrained> {
    let q = estimate.len();
    dim_check(block.dim() == q, || {
        format!(
            "constraints act on dimension {}, estimate has {q}",
            block.dim()
        )
    })?;
    if block.is_empty() {
        return Ok(Constrained {
            estimate: estimate.clone(),
            covariance: cov.clone(),
            gamma: Matrix::zeros(q, 0),
            active: Vec::new(),
            rows: Matrix::zeros(0, q),
        });
    }
    let metric = projection_metric(cov);
    let res = projection::project_with_covariance(estimate, &metric, &block.matrix, &block.bound)?;
    let rows = res.active_rows(&block.matrix);
    let covariance = projection::project_covariance(cov, &res.gamma, &rows)?;
    Ok(Constrained {
        estimate: res.z,
        covariance,
        gamma: res.gamma,
        active: res.active,
        rows,
    })
}

/// Projects the attack estimate onto the attack block.
pub fn constrain_attack(
    d_hat_u: &Vector,
    p_du: &Matrix,
    block: &Inequalities,
) -> Result<Constrained> {
    constrain(d_hat_u, p_du, block)
}

/// Projects the state estimate onto the state block.
pub fn constrain_state(
    x_hat_u: &Vector,
    p_xu: &Matrix,
    block: &Inequalities,
) -> Result<Constrained> {
    constrain(x_hat_u, p_xu, block)
}

/// Returns `(x̂⋆, P⋆, R̃⋆)`. `d_shift` is the attack estimate added to the
/// prediction; `p_d` enters the covariance.
#[allow(clippy::too_many_arguments)]
pub fn time_update(
    x_pred: &Vector,
    d_shift: &Vector,
    p_x_prev: &Matrix,
    p_xd: &Matrix,
    p_d: &Matrix,
    prev: &SystemStep,
    cur: &SystemStep,
    m: &Matrix,
) -> Result<(Vector, Matrix, Matrix)> {
    let d = prev.dims();
    dim_check(d_shift.len() == d.p && p_d.shape() == (d.p, d.p), || {
        "attack estimate dimensions".into()
    })?;
    dim_check(
        p_xd.shape() == (d.n, d.p) && m.shape() == (d.p, d.l),
        || "gain dimensions".into(),
    )?;
    let (a, g, q) = (prev.a(), prev.g(), prev.q());
    let (c, r) = (cur.c(), cur.r());
    let x_star = x_pred + g * d_shift;
    let gmc_q = g * m * c * q;
    let p_star = a * p_x_prev * a.transpose()
        + a * p_xd * g.transpose()
        + g * p_xd.transpose() * a.transpose()
        + g * p_d * g.transpose()
        - &gmc_q
        - gmc_q.transpose()
        + q;
    let p_star = linalg::symmetrize(&p_star);
    let cgmr = c * g * m * r;
    let r_star = linalg::symmetrize(&(c * &p_star * c.transpose() + r - &cgmr - cgmr.transpose()));
    Ok((x_star, p_star, r_star))
}

/// Returns `(L, x̂ᵘ, Pˣᵘ)`.
pub fn measurement_update(
    x_star: &Vector,
    p_star: &Matrix,
    r_star: &Matrix,
    prev: &SystemStep,
    cur: &SystemStep,
    m: &Matrix,
    y: &Vector,
) -> Result<(Matrix, Vector, Matrix)> {
    let d = cur.dims();
    dim_check(r_star.shape() == (d.l, d.l), || {
        format!("R̃⋆ is {:?}", r_star.shape())
    })?;
    let (min_eig, _) = linalg::eig_range(r_star);
    if min_eig < -linalg::psd_tolerance(r_star) {
        return Err(Error::Numerical(format!(
            "R̃⋆ has negative eigenvalue {min_eig:e}"
        )));
    }
    let (c, r) = (cur.c(), cur.r());
    let gmr = prev.g() * m * r;
    let l = (p_star * c.transpose() - &gmr)
        * linalg::pinv_abs(r_star, r_star_cutoff(p_star, cur, &gmr));
    let x_hat_u = x_star + &l * (y - c * x_star);
    let ikc = Matrix::identity(d.n, d.n) - &l * c;
    let cross = &ikc * &gmr * l.transpose();
    let p_xu =
        &ikc * p_star * ikc.transpose() + &cross + cross.transpose() + &l * r * l.transpose();
    Ok((l, x_hat_u, linalg::symmetrize(&p_xu)))
}

/// Singular values of `R̃⋆` below this are treated as zero.
///
/// `R̃⋆` is a difference of terms and is often exactly singular (rank
/// `l − p` when `C` has full rank), so its null-space singular values are
/// rounding noise on the scale of those terms, not of `R̃⋆` itself.
fn r_star_cutoff(p_star: &Matrix, cur: &SystemStep, gmr: &Matrix) -> f64 {
    let c = cur.c();
    let scale = (c * p_star * c.transpose()).norm() + cur.r().norm() + 2.0 * (c * gmr).norm();
    PINV_RTOL * scale
}

/// Relative cutoff used by [`r_star_cutoff`].
pub const PINV_RTOL: f64 = 1e-10;

/// One full recursion from `state` (time `k−1`) to time `k = state.k + 1`.
///
/// `prev` holds the matrices at `k−1`, `cur` those at `k`; `u` is `u_{k-1}`
/// and `y` is `y_k`.
pub fn step(
    state: &FilterState,
    prev: &SystemStep,
    cur: &SystemStep,
    u: &Vector,
    y: &Vector,
    constraints: &dyn ConstraintProvider,
    options: &FilterOptions,
) -> Result<(StepOutput, FilterState)> {
    let k = state.k + 1;
    let at = |stage: Stage| {
        move |e: Error| Error::Step {
            step: k,
            stage,
            source: Box::new(e),
        }
    };

    let (x_pred, p_pred) = predict(state, prev, u).map_err(at(Stage::Predict))?;
    let cs = constraints.constraints(k, &x_pred, u);
    let att = estimate_attack(&x_pred, &p_pred, &state.p_x, prev, cur, y)
        .map_err(at(Stage::EstimateAttack))?;
    let dc = constrain_attack(&att.d_hat_u, &att.p_du, &cs.attack)
        .map_err(at(Stage::ConstrainAttack))?;
    let mode = options.time_update_attack;
    let d_shift = if mode.uses_projected_shift() {
        &dc.estimate
    } else {
        &att.d_hat_u
    };
    let p_shift = if mode.uses_projected_covariance() {
        &dc.covariance
    } else {
        &att.p_du
    };
    let (x_star, p_star, r_star) = time_update(
        &x_pred, d_shift, &state.p_x, &att.p_xd, p_shift, prev, cur, &att.m,
    )
    .map_err(at(Stage::TimeUpdate))?;
    let (l, x_hat_u, p_xu) = measurement_update(&x_star, &p_star, &r_star, prev, cur, &att.m, y)
        .map_err(at(Stage::MeasurementUpdate))?;
    let state_block = match options.state_constraint_point {
        StateConstraintPoint::Predicted => cs.state,
        StateConstraintPoint::Updated => constraints.constraints(k, &x_hat_u, u).state,
    };
    let xc = constrain_state(&x_hat_u, &p_xu, &state_block).map_err(at(Stage::ConstrainState))?;

    let next = FilterState {
        x_hat: xc.estimate.clone(),
        p_x: xc.covariance.clone(),
        k,
    };
    let out = StepOutput {
        k,
        x_pred,
        p_pred,
        r_tilde: att.r_tilde,
        m: att.m,
        d_hat_u: att.d_hat_u,
        p_du: att.p_du,
        d_hat: dc.estimate,
        p_d: dc.covariance,
        p_xd: att.p_xd,
        gamma_d: dc.gamma,
        active_d: dc.active,
        x_star,
        p_star,
        r_star,
        l,
        x_hat_u,
        p_xu,
        x_hat: xc.estimate,
        p_x: xc.covariance,
        gamma_x: xc.gamma,
        active_x: xc.active,
        state_rows: xc.rows,
    };
    Ok((out, next))
}

/// Stateful wrapper around [`step`]. Not meant to be shared between threads
/// while stepping; independent instances are independent.
#[derive(Debug, Clone)]
pub struct Estimator {
    state: FilterState,
    options: FilterOptions,
}

impl Estimator {
    pub fn new(state: FilterState, options: FilterOptions) -> Self {
        Estimator { state, options }
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn step(
        &mut self,
        prev: &SystemStep,
        cur: &SystemStep,
        u: &Vector,
        y: &Vector,
        constraints: &dyn ConstraintProvider,
    ) -> Result<StepOutput> {
        let (out, next) = step(&self.state, prev, cur, u, y, constraints, &self.options)?;
        self.state = next;
        Ok(out)
    }
}

/// `Ã_{k-1} = (I − G_k M_k (C_k G_{k-1} M_k)† C_k) (I − G_{k-1} M_k C_k) A_{k-1} (I − γˣ_{k-1} ℬ̄_{k-1})`.
///
/// `C G M` is only invertible when `l = p`; otherwise its pseudoinverse is
/// used, which requires `rank(C G M) = p`.
pub fn transformed_matrix(
    prev: &SystemStep,
    cur: &SystemStep,
    m: &Matrix,
    gamma_x_prev: &Matrix,
    state_rows_prev: &Matrix,
) -> Result<Matrix> {
    let d = cur.dims();
    dim_check(m.shape() == (d.p, d.l), || {
        format!("M is {:?}, expected {}×{}", m.shape(), d.p, d.l)
    })?;
    let eye = Matrix::identity(d.n, d.n);
    dim_check(
        gamma_x_prev.nrows() == d.n
            && state_rows_prev.ncols() == d.n
            && gamma_x_prev.ncols() == state_rows_prev.nrows(),
        || {
            format!(
                "γ {:?} and ℬ̄ {:?} incompatible",
                gamma_x_prev.shape(),
                state_rows_prev.shape()
            )
        },
    )?;
    let projector = &eye - gamma_x_prev * state_rows_prev;
    let a_bar = (&eye - prev.g() * m * cur.c()) * prev.a();
    let cgm = cur.c() * prev.g() * m;
    let sv = linalg::singular_values(&cgm);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax && s > 0.0).count();
    if rank < d.p {
        return Err(Error::Singular(format!(
            "C G M has rank {rank}, expected {}",
            d.p
        )));
    }
    let cgm_inv = linalg::pinv_rtol(&cgm, 1e-10);
    let left = &eye - cur.g() * m * cgm_inv * cur.c();
    Ok(left * a_bar * projector)
}

/// `Σ_j Φ_jᵀ C_jᵀ C_j Φ_j` with `Φ_0 = I`, `Φ_{j+1} = Ã_j Φ_j` over the
/// given window of `(C_j, Ã_j)` pairs.
pub fn observability_gramian(window: &[(Matrix, Matrix)]) -> Matrix {
    let n = window.first().map_or(0, |(_, a)| a.nrows());
    let mut phi = Matrix::identity(n, n);
    let mut gram = Matrix::zeros(n, n);
    for (c, a_t) in window {
        let cp = c * &phi;
        gram += cp.transpose() * cp;
        phi = a_t * phi;
    }
    linalg::symmetrize(&gram)
}
