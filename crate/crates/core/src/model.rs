//! Linear time-varying stochastic system description and the linear
//! inequality constraints on the attack and the state.
//!
//! ```text
//! x_{k+1} = A_k x_k + B_k u_k + G_k d_k + w_k,   w_k ~ N(0, Q_k)
//! y_k     = C_k x_k + v_k,                       v_k ~ N(0, R_k)
//! 𝒜_k d_k ≤ b_k,   ℬ_k x_k ≤ c_k
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::projection;

/// All model matrices for a single time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemStep {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    g: Matrix,
    q: Matrix,
    r: Matrix,
}

impl SystemStep {
    /// Checks dimensions, finiteness, `Q ⪰ 0` and `R ≻ 0`.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, g: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let n = a.nrows();
        let l = c.nrows();
        dim_check(n > 0 && a.ncols() == n, || {
            format!("A must be square and non-empty, got {:?}", a.shape())
        })?;
        dim_check(b.nrows() == n, || {
            format!("B has {} rows, expected {n}", b.nrows())
        })?;
        dim_check(c.ncols() == n && l > 0, || {
            format!("C is {:?}, expected l×{n}", c.shape())
        })?;
        dim_check(g.nrows() == n && g.ncols() > 0, || {
            format!("G is {:?}, expected {n}×p", g.shape())
        })?;
        dim_check(q.shape() == (n, n), || {
            format!("Q is {:?}, expected {n}×{n}", q.shape())
        })?;
        dim_check(r.shape() == (l, l), || {
            format!("R is {:?}, expected {l}×{l}", r.shape())
        })?;
        for (name, m) in [
            ("A", &a),
            ("B", &b),
            ("C", &c),
            ("G", &g),
            ("Q", &q),
            ("R", &r),
        ] {
            if !linalg::all_finite(m) {
                return Err(Error::Argument(format!("{name} has non-finite entries")));
            }
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            if linalg::asymmetry(m) > 1e-10 * (1.0 + m.amax()) {
                return Err(Error::Argument(format!("{name} is not symmetric")));
            }
        }
        if !linalg::is_psd(&q) {
            return Err(Error::Argument("Q is not positive semi-definite".into()));
        }
        if !linalg::is_pd(&r) {
            return Err(Error::Argument("R is not positive definite".into()));
        }
        Ok(SystemStep { a, b, c, g, q, r })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn g(&self) -> &Matrix {
        &self.g
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            m: self.b.ncols(),
            p: self.g.ncols(),
            l: self.c.nrows(),
        }
    }
}

/// State, known-input, attack and output dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub l: usize,
}

/// Step-indexed source of model matrices.
pub trait ModelProvider: Send + Sync {
    fn step(&self, k: usize) -> &SystemStep;

    fn dims(&self) -> Dims {
        self.step(0).dims()
    }
}

/// The same matrices at every time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel(pub SystemStep);

impl ModelProvider for ConstantModel {
    fn step(&self, _k: usize) -> &SystemStep {
        &self.0
    }
}

/// Explicit per-step matrices. Indices past the end repeat the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    steps: Vec<SystemStep>,
}

impl SequenceModel {
    pub fn new(steps: Vec<SystemStep>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Argument("a sequence model needs at least one step".into()))?
            .dims();
        for (k, s) in steps.iter().enumerate() {
            dim_check(s.dims() == first, || {
                format!("step {k} has dims {:?}, expected {first:?}", s.dims())
            })?;
        }
        Ok(SequenceModel { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl ModelProvider for SequenceModel {
    fn step(&self, k: usize) -> &SystemStep {
        &self.steps[k.min(self.steps.len() - 1)]
    }
}

/// Linear inequalities `matrix · z ≤ bound`. Zero rows means unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequalities {
    pub matrix: Matrix,
    pub bound: Vector,
}

impl Inequalities {
    pub fn new(matrix: Matrix, bound: Vector) -> Result<Self> {
        dim_check(matrix.nrows() == bound.len(), || {
            format!(
                "{} constraint rows but {} bounds",
                matrix.nrows(),
                bound.len()
            )
        })?;
        if !linalg::all_finite(&matrix) || bound.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument(
                "constraint data contains NaN or infinite coefficients".into(),
            ));
        }
        Ok(Inequalities { matrix, bound })
    }

    pub fn none(dim: usize) -> Self {
        Inequalities {
            matrix: Matrix::zeros(0, dim),
            bound: Vector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    /// Largest violation `max_i (a_i·z − b_i)`, or `-∞` with no rows.
    pub fn max_violation(&self, z: &Vector) -> f64 {
        (&self.matrix * z - &self.bound)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Feasibility tolerance `1e-9 · (1 + ‖b‖∞)`.
    pub fn tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.bound.amax())
    }

    pub fn contains(&self, z: &Vector) -> bool {
        self.max_violation(z) <= self.tolerance()
    }
}

/// Attack block `𝒜 d ≤ b` and state block `ℬ x ≤ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub attack: Inequalities,
    pub state: Inequalities,
}

impl ConstraintSet {
    pub fn new(attack: Inequalities, state: Inequalities) -> Self {
        ConstraintSet { attack, state }
    }

    pub fn none(p: usize, n: usize) -> Self {
        ConstraintSet {
            attack: Inequalities::none(p),
            state: Inequalities::none(n),
        }
    }

    pub fn without_attack(mut self) -> Self {
        self.attack = Inequalities::none(self.attack.dim());
        self
    }

    pub fn without_state(mut self) -> Self {
        self.state = Inequalities::none(self.state.dim());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCheck {
    pub k: usize,
    /// Numerical rank of `C_k G_{k-1}`.
    pub rank_cg: usize,
    pub rank_ok: bool,
    pub r_pd: bool,
    pub q_psd: bool,
}

impl StepCheck {
    pub fn passed(&self) -> bool {
        self.rank_ok && self.r_pd && self.q_psd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub p: usize,
    pub steps: Vec<StepCheck>,
}

impl ModelReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(StepCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StepCheck> {
        self.steps.iter().filter(|s| !s.passed())
    }
}

/// Checks the standing assumptions for `k = 1..=horizon`.
///
/// Rank failures are report entries; inconsistent dimensions between
/// consecutive steps are an error.
pub fn validate_model(provider: &dyn ModelProvider, horizon: usize) -> Result<ModelReport> {
    if horizon == 0 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    let dims = provider.step(0).dims();
    let mut steps = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let prev = provider.step(k - 1);
        let cur = provider.step(k);
        dim_check(cur.dims() == dims, || {
            format!("step {k} has dims {:?}, step 0 has {dims:?}", cur.dims())
        })?;
        let rank_cg = linalg::rank(&(cur.c() * prev.g()));
        steps.push(StepCheck {
            k,
            rank_cg,
            rank_ok: rank_cg == dims.p,
            r_pd: linalg::is_pd(cur.r()),
            q_psd: linalg::is_psd(cur.q()),
        });
    }
    Ok(ModelReport { p: dims.p, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub attack_feasible: bool,
    pub state_feasible: bool,
    pub state_rank: usize,
    pub state_rank_ok: bool,
    pub reasons: Vec<String>,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.reasons.is_empty()
    }
}

/// Confirms both blocks are non-empty and `rank(ℬ) < n`.
pub fn validate_constraints(cs: &ConstraintSet) -> ConstraintReport {
    let mut reasons = Vec::new();
    let attack_feasible = block_feasible(&cs.attack);
    if !attack_feasible {
        reasons.push("attack constraints have an empty feasible set".to_string());
    }
    let state_feasible = block_feasible(&cs.state);
    if !state_feasible {
        reasons.push("state constraints have an empty feasible set".to_string());
    }
    let n = cs.state.dim();
    let state_rank = if cs.state.is_empty() {
        0
    } else {
        linalg::rank(&cs.state.matrix)
    };
    let state_rank_ok = cs.state.is_empty() || state_rank < n;
    if !state_rank_ok {
        reasons.push(format!(
            "state constraint matrix has rank {state_rank}, must be below {n}"
        ));
    }
    ConstraintReport {
        attack_feasible,
        state_feasible,
        state_rank,
        state_rank_ok,
        reasons,
    }
}

fn block_feasible(block: &Inequalities) -> bool {
    block.is_empty() || projection::feasible_point(&block.matrix, &block.bound).is_ok()
}
