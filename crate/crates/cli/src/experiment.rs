//! Simulation, estimation, detection, Monte-Carlo and comparison runs,
//! independent of where their inputs come from or outputs go.

use ares_core::detector::{chi2_threshold, detect_with_threshold};
use ares_core::filter::{observability_gramian, transformed_matrix, ConstraintProvider};
use ares_core::scenario::simulate_scaled;
use ares_core::{linalg, Estimator, FilterState, StepOutput, Trajectory, Vector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Setup};
use crate::error::{CliError, CliResult};
use crate::io::{DetectionRow, MetricsRow};

/// Mean-square errors above this count as divergence.
pub const DIVERGENCE_MSE: f64 = 1e12;

/// Simulates one trajectory with zero known input.
pub fn simulate(cfg: &ExperimentConfig, setup: &Setup, seed: u64) -> CliResult<Trajectory> {
    let m = setup.model().dims().m;
    let input = |_k: usize| Vector::zeros(m);
    Ok(simulate_scaled(
        setup.model(),
        &setup.schedule,
        &input,
        &setup.x0,
        cfg.horizon,
        seed,
        cfg.process_noise_scale,
        cfg.measurement_noise_scale,
    )?)
}

/// Filter outputs over a trajectory, with the initial error at `k = 0`.
#[derive(Debug, Clone)]
pub struct Run {
    pub initial: FilterState,
    pub initial_err_x: f64,
    pub steps: Vec<StepOutput>,
    pub metrics: Vec<MetricsRow>,
}

fn check_trajectory(setup: &Setup, t: &Trajectory) -> CliResult<()> {
    let d = setup.model().dims();
    let bad = |what: &str| CliError::Config(format!("trajectory {what} does not match the model"));
    if t.is_empty() {
        return Err(bad("length"));
    }
    for k in 0..t.len() {
        if t.x[k].len() != d.n || t.w[k].len() != d.n {
            return Err(bad("state dimension"));
        }
        if t.u[k].len() != d.m {
            return Err(bad("input dimension"));
        }
        if t.d[k].len() != d.p {
            return Err(bad("attack dimension"));
        }
        if t.y[k].len() != d.l || t.v[k].len() != d.l {
            return Err(bad("measurement dimension"));
        }
    }
    Ok(())
}

/// Runs the filter over `t`, starting from `y₀`.
pub fn estimate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    t: &Trajectory,
    constraints: &dyn ConstraintProvider,
) -> CliResult<Run> {
    check_trajectory(setup, t)?;
    let model = setup.model();
    let initial = FilterState::initial(model.step(0), &t.y[0], cfg.p0_scale)?;
    let initial_err_x = (&initial.x_hat - &t.x[0]).norm();
    let threshold = chi2_threshold(model.dims().p.max(1), cfg.alpha)?;
    let mut est = Estimator::new(initial.clone(), cfg.filter_options());
    let mut steps = Vec::with_capacity(t.len());
    let mut metrics = Vec::with_capacity(t.len());
    for k in 1..t.len() {
        let out = est.step(
            model.step(k - 1),
            model.step(k),
            &t.u[k - 1],
            &t.y[k],
            constraints,
        )?;
        let det = detect_with_threshold(&out.d_hat, &out.p_d, cfg.alpha, threshold)?;
        metrics.push(MetricsRow {
            k,
            err_x: (&out.x_hat - &t.x[k]).norm(),
            err_x_u: (&out.x_hat_u - &t.x[k]).norm(),
            err_d: (&out.d_hat - &t.d[k - 1]).norm(),
            err_d_u: (&out.d_hat_u - &t.d[k - 1]).norm(),
            trace_p_x: out.p_x.trace(),
            trace_p_xu: out.p_xu.trace(),
            trace_p_d: out.p_d.trace(),
            trace_p_du: out.p_du.trace(),
            chi2: det.statistic,
            attacked: det.attacked,
            active_d: out.active_d.len(),
            active_x: out.active_x.len(),
        });
        steps.push(out);
    }
    Ok(Run {
        initial,
        initial_err_x,
        steps,
        metrics,
    })
}

/// χ² decisions for every logged step.
pub fn detect(steps: &[StepOutput], alpha: f64) -> CliResult<Vec<DetectionRow>> {
    let p = steps.first().map_or(1, |s| s.d_hat.len()).max(1);
    let threshold = chi2_threshold(p, alpha)?;
    steps
        .iter()
        .map(|s| {
            let c = detect_with_threshold(&s.d_hat, &s.p_d, alpha, threshold)?;
            let u = detect_with_threshold(&s.d_hat_u, &s.p_du, alpha, threshold)?;
            Ok(DetectionRow {
                k: s.k,
                dof: c.dof,
                alpha,
                threshold,
                statistic: c.statistic,
                attacked: c.attacked,
                degenerate: c.degenerate,
                statistic_u: u.statistic,
                attacked_u: u.attacked,
            })
        })
        .collect()
}

/// `a·e^{−bk}·E‖x̃₀‖² + c` bounding the mean-square curve from above.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dominates: bool,
}

/// Summary of a Monte-Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    /// Mean `‖x̃_k‖²` for `k = 0..horizon`.
    #[serde(skip)]
    pub mse_x: Vec<f64>,
    /// Mean `‖d̃_{k−1}‖²` for `k = 1..horizon`, with `0` at `k = 0`.
    #[serde(skip)]
    pub mse_d: Vec<f64>,
    pub initial_mse: f64,
    pub fit: ExponentialFit,
    pub steady_state_from: usize,
    pub steady_max: f64,
    pub steady_median: f64,
    /// `steady_max / steady_median`.
    pub steady_ratio: f64,
    /// First step with mean-square error at most twice the steady median.
    pub settle_step: Option<usize>,
    pub max_mse: f64,
    pub diverged: bool,
    pub min_eig_p_xu: f64,
    pub max_eig_p_xu: f64,
    pub gramian_window: usize,
    /// Smallest eigenvalue of the sliding-window observability Gramian.
    pub gramian_min_eig: f64,
}

struct RunSummary {
    seed: u64,
    sq_x: Vec<f64>,
    sq_d: Vec<f64>,
    min_eig: f64,
    max_eig: f64,
    gramian_min_eig: f64,
}

fn summarize(cfg: &ExperimentConfig, setup: &Setup, seed: u64) -> CliResult<RunSummary> {
    let t = simulate(cfg, setup, seed)?;
    let run = estimate(cfg, setup, &t, &setup.constraints())?;
    let mut sq_x = vec![run.initial_err_x.powi(2)];
    let mut sq_d = vec![0.0];
    let (mut min_eig, mut max_eig) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &run.metrics {
        sq_x.push(m.err_x.powi(2));
        sq_d.push(m.err_d.powi(2));
    }
    for s in &run.steps {
        let (lo, hi) = linalg::eig_range(&s.p_xu);
        min_eig = min_eig.min(lo);
        max_eig = max_eig.max(hi);
    }
    Ok(RunSummary {
        seed,
        sq_x,
        sq_d,
        min_eig,
        max_eig,
        gramian_min_eig: gramian_diagnostic(setup, &run, cfg.gramian_window)?,
    })
}

/// Smallest eigenvalue of the observability Gramian of `(C, Ã)` over every
/// window of `window` consecutive steps; infinite when no window fits.
fn gramian_diagnostic(setup: &Setup, run: &Run, window: usize) -> CliResult<f64> {
    let model = setup.model();
    let mut pairs = Vec::with_capacity(run.steps.len());
    let (mut gamma, mut rows) = (
        run.initial.p_x.columns(0, 0).into_owned(),
        run.initial.p_x.rows(0, 0).into_owned(),
    );
    for s in &run.steps {
        let a_t = transformed_matrix(model.step(s.k - 1), model.step(s.k), &s.m, &gamma, &rows)?;
        pairs.push((model.step(s.k - 1).c().clone(), a_t));
        gamma = s.gamma_x.clone();
        rows = s.state_rows.clone();
    }
    let mut min = f64::INFINITY;
    for w in pairs.windows(window) {
        min = min.min(linalg::eig_range(&observability_gramian(w)).0);
    }
    Ok(min)
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits `a·e^{−bk}·e0 + c` above `curve`: `c` is the steady-state maximum,
/// `b` the log-linear decay rate of the excess over the steady median during
/// the transient, and `a` the smallest scale that dominates every point.
pub fn fit_exponential(curve: &[f64], steady_from: usize) -> ExponentialFit {
    let fail = ExponentialFit {
        a: f64::NAN,
        b: f64::NAN,
        c: f64::NAN,
        dominates: false,
    };
    if curve.is_empty() || curve.iter().any(|v| !v.is_finite()) {
        return fail;
    }
    let from = steady_from.min(curve.len() - 1);
    let steady = &curve[from..];
    let c = steady.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = median(steady);
    let pts: Vec<(f64, f64)> = curve[..from]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > level)
        .map(|(k, &v)| (k as f64, (v - level).ln()))
        .collect();
    let b = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mk = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mk).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum();
        -sxy / sxx
    } else {
        // No transient above the steady level: any positive rate works.
        1.0 / from.max(1) as f64
    };
    if !(b > 0.0 && b.is_finite()) {
        return ExponentialFit { b, c, ..fail };
    }
    let e0 = curve[0];
    let mut a: f64 = 0.0;
    for (k, &v) in curve.iter().enumerate() {
        let excess = v - c;
        if excess > 0.0 {
            if e0 <= 0.0 {
                return ExponentialFit { b, c, ..fail };
            }
            a = a.max(excess * (b * k as f64).exp() / e0);
        }
    }
    let dominates = a.is_finite() && c.is_finite();
    ExponentialFit { a, b, c, dominates }
}

/// Runs every seed in parallel and reduces in seed order.
pub fn montecarlo(
    cfg: &ExperimentConfig,
    setup: &Setup,
    seeds: &[u64],
) -> CliResult<StabilityReport> {
    if seeds.is_empty() {
        return Err(CliError::Config(
            "Monte-Carlo needs at least one run".into(),
        ));
    }
    let mut runs = seeds
        .par_iter()
        .map(|&s| summarize(cfg, setup, s))
        .collect::<CliResult<Vec<_>>>()?;
    runs.sort_by_key(|r| r.seed);
    let len = runs[0].sq_x.len();
    let n = runs.len() as f64;
    let mut mse_x = vec![0.0; len];
    let mut mse_d = vec![0.0; len];
    for r in &runs {
        for k in 0..len {
            mse_x[k] += r.sq_x[k];
            mse_d[k] += r.sq_d[k];
        }
    }
    mse_x
        .iter_mut()
        .chain(mse_d.iter_mut())
        .for_each(|v| *v /= n);

    let from = cfg.steady_state_from.min(len - 1);
    let steady = &mse_x[from..];
    let steady_max = steady.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let steady_median = median(steady);
    let max_mse = mse_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        runs: runs.len(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        horizon: cfg.horizon,
        initial_mse: mse_x[0],
        fit: fit_exponential(&mse_x, cfg.steady_state_from),
        steady_state_from: from,
        steady_max,
        steady_median,
        steady_ratio: if steady_median > 0.0 {
            steady_max / steady_median
        } else {
            1.0
        },
        settle_step: mse_x.iter().position(|&v| v <= 2.0 * steady_median),
        max_mse,
        diverged: max_mse.is_nan() || max_mse > DIVERGENCE_MSE,
        min_eig_p_xu: runs.iter().map(|r| r.min_eig).fold(f64::INFINITY, f64::min),
        max_eig_p_xu: runs
            .iter()
            .map(|r| r.max_eig)
            .fold(f64::NEG_INFINITY, f64::max),
        gramian_window: cfg.gramian_window,
        gramian_min_eig: runs
            .iter()
            .map(|r| r.gramian_min_eig)
            .fold(f64::INFINITY, f64::min),
        mse_x,
        mse_d,
    })
}

/// Constrained and unconstrained runs on one trajectory, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub k: usize,
    pub err_x: f64,
    pub err_x_free: f64,
    pub err_d: f64,
    pub err_d_free: f64,
    pub trace_p_x: f64,
    pub trace_p_x_free: f64,
    pub trace_p_d: f64,
    pub trace_p_d_free: f64,
}

impl CompareRow {
    pub const HEADER: [&'static str; 11] = [
        "k",
        "err_x",
        "err_x_free",
        "delta_err_x",
        "err_d",
        "err_d_free",
        "delta_err_d",
        "trace_p_x",
        "trace_p_x_free",
        "trace_p_d",
        "trace_p_d_free",
    ];

    pub fn record(&self) -> Vec<String> {
        let f = crate::io::fmt_f64;
        vec![
            self.k.to_string(),
            f(self.err_x),
            f(self.err_x_free),
            f(self.err_x - self.err_x_free),
            f(self.err_d),
            f(self.err_d_free),
            f(self.err_d - self.err_d_free),
            f(self.trace_p_x),
            f(self.trace_p_x_free),
            f(self.trace_p_d),
            f(self.trace_p_d_free),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub seed: u64,
    pub steps: usize,
    pub mean_err_x: f64,
    pub mean_err_x_free: f64,
    pub mean_err_d: f64,
    pub mean_err_d_free: f64,
    pub mean_trace_p_x: f64,
    pub mean_trace_p_x_free: f64,
    pub steps_active_x: usize,
    pub steps_active_d: usize,
}

pub fn compare(
    cfg: &ExperimentConfig,
    setup: &Setup,
    t: &Trajectory,
) -> CliResult<(Vec<CompareRow>, CompareSummary)> {
    let on = estimate(cfg, setup, t, &setup.constraints())?;
    let off = estimate(cfg, setup, t, &setup.unconstrained())?;
    let rows: Vec<CompareRow> = on
        .metrics
        .iter()
        .zip(&off.metrics)
        .map(|(a, b)| CompareRow {
            k: a.k,
            err_x: a.err_x,
            err_x_free: b.err_x,
            err_d: a.err_d,
            err_d_free: b.err_d,
            trace_p_x: a.trace_p_x,
            trace_p_x_free: b.trace_p_x,
            trace_p_d: a.trace_p_d,
            trace_p_d_free: b.trace_p_d,
        })
        .collect();
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&CompareRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = CompareSummary {
        seed: t.seed,
        steps: rows.len(),
        mean_err_x: mean(|r| r.err_x),
        mean_err_x_free: mean(|r| r.err_x_free),
        mean_err_d: mean(|r| r.err_d),
        mean_err_d_free: mean(|r| r.err_d_free),
        mean_trace_p_x: mean(|r| r.trace_p_x),
        mean_trace_p_x_free: mean(|r| r.trace_p_x_free),
        steps_active_x: on.metrics.iter().filter(|m| m.active_x > 0).count(),
        steps_active_d: on.metrics.iter().filter(|m| m.active_d > 0).count(),
    };
    Ok((rows, summary))
}
