//! Planar double-integrator agents under an actuator attack.
//!
//! Each agent has state `[r_x, r_y, v_x, v_y]`, is sampled at 0.1 s, and is
//! pushed by a square-wave attack on its x acceleration. The constraints are
//! an acceleration bound on `d + u`, a speed bound, and a minimum separation
//! between every pair of agents along at least one axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::filter::ConstraintProvider;
use crate::linalg::{self, Matrix, Vector};
use crate::model::{ConstantModel, ConstraintSet, Inequalities, ModelProvider, SystemStep};

pub const DT: f64 = 0.1;
pub const PROCESS_NOISE: f64 = 0.1;
pub const MEASUREMENT_NOISE: f64 = 0.01;
pub const ATTACK_AMPLITUDE: f64 = 20.0;
pub const ACCEL_LIMIT: f64 = 20.0;
pub const SPEED_LIMIT: f64 = 80.0;
pub const MIN_SEPARATION: f64 = 100.0;
/// Initial spacing of the agents along the y axis.
pub const INITIAL_SPACING: f64 = 200.0;

const AGENT_STATES: usize = 4;
const AGENT_INPUTS: usize = 2;

/// Per-agent `(A, B, C, Q, R)`; the attack map equals `B`.
pub fn agent_matrices() -> (Matrix, Matrix, Matrix, Matrix, Matrix) {
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(4, 4, &[
        1.0, 0.0, DT,  0.0,
        0.0, 1.0, 0.0, DT,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = Matrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        0.0, 0.0,
        DT,  0.0,
        0.0, DT,
    ]);
    let c = Matrix::identity(4, 4);
    let q = Matrix::identity(4, 4) * PROCESS_NOISE;
    let r = Matrix::identity(4, 4) * MEASUREMENT_NOISE;
    (a, b, c, q, r)
}

/// Block-diagonal model of `n_agents` independent agents.
pub fn build_multiagent(n_agents: usize) -> Result<ConstantModel> {
    if n_agents == 0 {
        return Err(Error::Argument("need at least one agent".into()));
    }
    let (a, b, c, q, r) = agent_matrices();
    let rep = |m: &Matrix| linalg::block_diag(&vec![m.clone(); n_agents]);
    let b_all = rep(&b);
    let step = SystemStep::new(rep(&a), b_all.clone(), rep(&c), b_all, rep(&q), rep(&r))?;
    Ok(ConstantModel(step))
}

/// How the speed limit is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedBound {
    /// `|v_a^i| ≤ 80` for every agent and axis.
    #[default]
    PerAgent,
    /// `|v_a^i − v_a^j| ≤ 80` for every pair of agents and axis.
    Relative,
}

/// The multi-agent benchmark: model, constraints and initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_agents: usize,
    pub speed_bound: SpeedBound,
    pub attack_constraints: bool,
    pub state_constraints: bool,
    model: ConstantModel,
}

impl Scenario {
    pub fn new(n_agents: usize) -> Result<Self> {
        Ok(Scenario {
            n_agents,
            speed_bound: SpeedBound::PerAgent,
            attack_constraints: true,
            state_constraints: true,
            model: build_multiagent(n_agents)?,
        })
    }

    pub fn model(&self) -> &ConstantModel {
        &self.model
    }

    pub fn state_dim(&self) -> usize {
        AGENT_STATES * self.n_agents
    }

    pub fn attack_dim(&self) -> usize {
        AGENT_INPUTS * self.n_agents
    }

    /// Agents at rest, `INITIAL_SPACING` apart along y.
    pub fn initial_state(&self) -> Vector {
        let mut x = Vector::zeros(self.state_dim());
        for i in 0..self.n_agents {
            x[AGENT_STATES * i + 1] = INITIAL_SPACING * i as f64;
        }
        x
    }

    /// Constraint set at a predicted state `x_pred` with known input `u`.
    ///
    /// The separation requirement is a disjunction of four half-spaces per
    /// pair; the one with the largest margin at `x_pred` is emitted.
    pub fn build_constraints(&self, x_pred: &Vector, u: &Vector) -> ConstraintSet {
        let n = self.state_dim();
        let p = self.attack_dim();
        let attack = if self.attack_constraints {
            acceleration_bounds(u)
        } else {
            Inequalities::none(p)
        };
        let state = if self.state_constraints {
            let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
            self.speed_rows(&mut rows);
            for i in 0..self.n_agents {
                for j in (i + 1)..self.n_agents {
                    rows.push(separation_row(x_pred, i, j));
                }
            }
            to_inequalities(&rows, n)
        } else {
            Inequalities::none(n)
        };
        ConstraintSet::new(attack, state)
    }

    fn speed_rows(&self, rows: &mut Vec<(Vec<(usize, f64)>, f64)>) {
        let vel = |agent: usize, axis: usize| AGENT_STATES * agent + 2 + axis;
        match self.speed_bound {
            SpeedBound::PerAgent => {
                for i in 0..self.n_agents {
                    for axis in 0..2 {
                        rows.push((vec![(vel(i, axis), 1.0)], SPEED_LIMIT));
                        rows.push((vec![(vel(i, axis), -1.0)], SPEED_LIMIT));
                    }
                }
            }
            SpeedBound::Relative => {
                for i in 0..self.n_agents {
                    for j in (i + 1)..self.n_agents {
                        for axis in 0..2 {
                            rows.push((
                                vec![(vel(i, axis), 1.0), (vel(j, axis), -1.0)],
                                SPEED_LIMIT,
                            ));
                            rows.push((
                                vec![(vel(i, axis), -1.0), (vel(j, axis), 1.0)],
                                SPEED_LIMIT,
                            ));
                        }
                    }
                }
            }
        }
    }
}

impl ConstraintProvider for Scenario {
    fn constraints(&self, _k: usize, x_pred: &Vector, u_prev: &Vector) -> ConstraintSet {
        self.build_constraints(x_pred, u_prev)
    }
}

/// `−20 − u ≤ d ≤ 20 − u` elementwise.
pub fn acceleration_bounds(u: &Vector) -> Inequalities {
    let p = u.len();
    let mut matrix = Matrix::zeros(2 * p, p);
    let mut bound = Vector::zeros(2 * p);
    for j in 0..p {
        matrix[(2 * j, j)] = 1.0;
        bound[2 * j] = ACCEL_LIMIT - u[j];
        matrix[(2 * j + 1, j)] = -1.0;
        bound[2 * j + 1] = ACCEL_LIMIT + u[j];
    }
    Inequalities { matrix, bound }
}

/// Picks the separation half-space `σ (r_a^i − r_a^j) ≥ 100` with the
/// largest margin at `x` (first of x+, x−, y+, y− on ties) and returns it as
/// `−σ (r_a^i − r_a^j) ≤ −100`.
fn separation_row(x: &Vector, i: usize, j: usize) -> (Vec<(usize, f64)>, f64) {
    let pos = |agent: usize, axis: usize| AGENT_STATES * agent + axis;
    let mut best: Option<(f64, usize, f64)> = None;
    for axis in 0..2 {
        let delta = x[pos(i, axis)] - x[pos(j, axis)];
        for sign in [1.0, -1.0] {
            let margin = sign * delta - MIN_SEPARATION;
            if best.is_none_or(|(m, ..)| margin > m) {
                best = Some((margin, axis, sign));
            }
        }
    }
    let (_, axis, sign) = best.expect("two axes considered");
    (
        vec![(pos(i, axis), -sign), (pos(j, axis), sign)],
        -MIN_SEPARATION,
    )
}

fn to_inequalities(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> Inequalities {
    let mut matrix = Matrix::zeros(rows.len(), n);
    let mut bound = Vector::zeros(rows.len());
    for (r, (coeffs, b)) in rows.iter().enumerate() {
        for &(c, v) in coeffs {
            matrix[(r, c)] = v;
        }
        bound[r] = *b;
    }
    Inequalities { matrix, bound }
}

/// Piecewise-constant actuator attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub amplitude: f64,
    /// Attack dimension `p`.
    pub dim: usize,
    /// Channels (0-based) that carry the square wave; the rest stay zero.
    pub channels: Vec<usize>,
    /// Index of the first and one past the last attack period
    /// (periods are 100 steps long).
    pub periods: (usize, usize),
}

impl AttackSchedule {
    /// The benchmark attack: the x-acceleration channel of every agent
    /// follows `+20` for 40 steps, `0` for 20, `−20` for 40, in periods
    /// starting at k = 100, …, 900. Outside those periods the attack is zero.
    pub fn square_wave(n_agents: usize) -> Self {
        AttackSchedule {
            amplitude: ATTACK_AMPLITUDE,
            dim: AGENT_INPUTS * n_agents,
            channels: (0..n_agents).map(|i| AGENT_INPUTS * i).collect(),
            periods: (1, 10),
        }
    }

    /// No attack at all.
    pub fn none(dim: usize) -> Self {
        AttackSchedule {
            amplitude: 0.0,
            dim,
            channels: Vec::new(),
            periods: (0, 0),
        }
    }

    /// Square-wave level at step `k`: `+1`, `0` or `−1` (times amplitude).
    pub fn level(&self, k: usize) -> f64 {
        let period = k / 100;
        if period < self.periods.0 || period >= self.periods.1 {
            return 0.0;
        }
        match k % 100 {
            0..=39 => 1.0,
            40..=59 => 0.0,
            _ => -1.0,
        }
    }

    pub fn signal(&self, k: usize) -> Vector {
        let mut d = Vector::zeros(self.dim);
        let v = self.amplitude * self.level(k);
        for &c in &self.channels {
            d[c] = v;
        }
        d
    }
}

/// Realized truth, inputs, noise and measurements for steps `0..len`.
///
/// `x[k+1] = A x[k] + B u[k] + G d[k] + w[k]` and `y[k] = C x[k] + v[k]`
/// hold exactly; `u`, `d` and `w` of the last step are drawn but do not
/// affect any recorded state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub d: Vec<Vector>,
    pub y: Vec<Vector>,
    pub w: Vec<Vector>,
    pub v: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Zero-mean Gaussian sample with covariance `S Sᵀ` where `sqrt = S`.
fn gaussian(rng: &mut ChaCha20Rng, sqrt: &Matrix) -> Vector {
    let xi = Vector::from_fn(sqrt.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    sqrt * xi
}

/// Simulates `horizon` steps from `x0`.
///
/// Noise comes from ChaCha20 seeded with `seed`, transformed to standard
/// normals by the ziggurat method and shaped by the symmetric square roots of
/// `Q` and `R`. At each step `v_k` is drawn before `w_k`.
pub fn simulate(
    provider: &dyn ModelProvider,
    schedule: &AttackSchedule,
    input: &dyn Fn(usize) -> Vector,
    x0: &Vector,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_scaled(provider, schedule, input, x0, horizon, seed, 1.0, 1.0)
}

/// [`simulate`] with process noise samples multiplied by `process_scale` and
/// measurement noise samples by `measurement_scale`; the random stream is the
/// same for every scale.
#[allow(clippy::too_many_arguments)]
pub fn simulate_scaled(
    provider: &dyn ModelProvider,
    schedule: &AttackSchedule,
    input: &dyn Fn(usize) -> Vector,
    x0: &Vector,
    horizon: usize,
    seed: u64,
    process_scale: f64,
    measurement_scale: f64,
) -> Result<Trajectory> {
    for scale in [process_scale, measurement_scale] {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Argument(format!(
                "noise scale must be finite and non-negative, got {scale}"
            )));
        }
    }
    if horizon == 0 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    let dims = provider.dims();
    dim_check(x0.len() == dims.n, || {
        format!("initial state of length {}, expected {}", x0.len(), dims.n)
    })?;
    dim_check(schedule.dim == dims.p, || {
        format!(
            "attack of dimension {}, model has p = {}",
            schedule.dim, dims.p
        )
    })?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut traj = Trajectory {
        seed,
        x: Vec::with_capacity(horizon),
        u: Vec::with_capacity(horizon),
        d: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
        w: Vec::with_capacity(horizon),
        v: Vec::with_capacity(horizon),
    };
    let mut x = x0.clone();
    for k in 0..horizon {
        let s = provider.step(k);
        let v = gaussian(&mut rng, &linalg::psd_sqrt(s.r())) * measurement_scale;
        let w = gaussian(&mut rng, &linalg::psd_sqrt(s.q())) * process_scale;
        let u = input(k);
        dim_check(u.len() == dims.m, || {
            format!(
                "input policy returned length {}, expected {}",
                u.len(),
                dims.m
            )
        })?;
        let d = schedule.signal(k);
        let y = s.c() * &x + &v;
        let next = s.a() * &x + s.b() * &u + s.g() * &d + &w;
        traj.x.push(std::mem::replace(&mut x, next));
        traj.u.push(u);
        traj.d.push(d);
        traj.y.push(y);
        traj.w.push(w);
        traj.v.push(v);
    }
    Ok(traj)
}
