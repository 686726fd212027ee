//! χ² test on an attack estimate.
//!
//! Under the null hypothesis `d = 0` the normalized estimate `d̂ᵀ P⁻¹ d̂`
//! is χ²-distributed with `p` degrees of freedom; the test rejects when it
//! exceeds the upper `alpha` quantile.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Relative singular-value cutoff for the pseudoinverse of the covariance.
const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub statistic: f64,
    pub threshold: f64,
    pub dof: usize,
    pub alpha: f64,
    /// `statistic > threshold`, or the estimate is degenerate.
    pub attacked: bool,
    /// The estimate had a component in the null space of the covariance;
    /// that component was left out of `statistic`. A zero-variance
    /// direction carrying a nonzero estimate counts as a rejection.
    pub degenerate: bool,
}

/// Quadratic form `d̂ᵀ P† d̂` and whether `d̂` leaves the range of `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Statistic {
    pub value: f64,
    pub degenerate: bool,
}

pub fn chi2_statistic(d_hat: &Vector, p_d: &Matrix) -> Result<Chi2Statistic> {
    let p = d_hat.len();
    dim_check(p_d.shape() == (p, p), || {
        format!("covariance {:?} for estimate of length {p}", p_d.shape())
    })?;
    if p == 0 {
        return Ok(Chi2Statistic {
            value: 0.0,
            degenerate: false,
        });
    }
    let sym = linalg::symmetrize(p_d);
    let pinv = linalg::pinv_rtol(&sym, PINV_RTOL);
    let value = (d_hat.transpose() * &pinv * d_hat)[(0, 0)].max(0.0);
    // Range projector P P†; whatever it misses lies in the null space.
    let in_range = &sym * &pinv * d_hat;
    let outside = (d_hat - in_range).norm();
    let degenerate = outside > 1e-8 * (1.0 + d_hat.norm());
    Ok(Chi2Statistic { value, degenerate })
}

/// Upper-tail probability `P(χ²_dof > x)`.
pub fn chi2_survival(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// The `q` with `P(χ²_dof > q) = alpha`, by bisection to 1e-10.
pub fn chi2_threshold(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Argument(
            "χ² degrees of freedom must be at least 1".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_survival(dof, hi) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if chi2_survival(dof, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// χ² test with `dof = p`.
pub fn detect(d_hat: &Vector, p_d: &Matrix, alpha: f64) -> Result<DetectionResult> {
    let threshold = chi2_threshold(d_hat.len().max(1), alpha)?;
    detect_with_threshold(d_hat, p_d, alpha, threshold)
}

/// Same as [`detect`] with a precomputed threshold.
pub fn detect_with_threshold(
    d_hat: &Vector,
    p_d: &Matrix,
    alpha: f64,
    threshold: f64,
) -> Result<DetectionResult> {
    let stat = chi2_statistic(d_hat, p_d)?;
    Ok(DetectionResult {
        statistic: stat.value,
        threshold,
        dof: d_hat.len(),
        alpha,
        attacked: stat.value > threshold || stat.degenerate,
        degenerate: stat.degenerate,
    })
}
