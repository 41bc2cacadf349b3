//! Curvature-based step sizes.
//!
//! Along a direction `d` with `rho = -d.g` (first-order decrease) and local
//! norm `delta = sqrt(d' H d)`, the step
//!
//! ```text
//! t = rho / ((rho + delta_eps) * delta_eps),    delta_eps = delta / sqrt(1 - eps)
//! ```
//!
//! guarantees a decrease of `omega(rho / delta)` for self-concordant
//! objectives, where `omega(z) = z - ln(1 + z)`. When the curvature or `rho`
//! is not positive the step falls back to the median of recent steps.

use std::collections::VecDeque;

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelState, ProblemConstants, Subset};
use crate::sampling::ceil_guarded;
use crate::vecops::{dot, median};

/// Step used when the fallback buffer is empty and no curvature is known.
pub const DEFAULT_BOOTSTRAP_STEP: f64 = 1e-3;

/// Per-iteration step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub rho: f64,
    pub delta_hat: f64,
    pub delta_hat_eps: f64,
    pub t: f64,
    /// `rho / delta_hat`, the decrease measure.
    pub eta: f64,
    pub fallback: bool,
    pub batch_size: usize,
}

/// The last `capacity` accepted (non-fallback) step sizes.
#[derive(Debug, Clone)]
pub struct FallbackBuffer {
    recent: VecDeque<f64>,
    capacity: usize,
}

impl FallbackBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("fallback buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            recent: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn from_steps(capacity: usize, steps: &[f64]) -> Result<Self> {
        let mut b = Self::new(capacity)?;
        for &t in steps {
            b.push(t);
        }
        Ok(b)
    }

    /// Ignores non-finite or non-positive values.
    pub fn push(&mut self, t: f64) {
        if !(t.is_finite() && t > 0.0) {
            return;
        }
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(t);
    }

    pub fn median(&self) -> Option<f64> {
        let steps: Vec<f64> = self.recent.iter().copied().collect();
        median(&steps)
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// `d' H_S d` at `state`. Never negative for the logistic model.
pub fn curvature_along(
    state: &ModelState,
    data: &SparseDataset,
    subset: Subset<'_>,
    d: &[f64],
) -> Result<f64> {
    Ok(dot(d, &model::hvp(state, data, subset, d)?))
}

/// Outcome of [`adaptive_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: f64,
    pub fallback: bool,
    pub delta_hat_eps: f64,
}

/// Adaptive step from `rho` and `delta_hat`, or the buffered median when
/// either is not positive. Accepted steps are pushed to `buffer`.
pub fn adaptive_step(
    rho: f64,
    delta_hat: f64,
    eps: f64,
    buffer: &mut FallbackBuffer,
    bootstrap: f64,
) -> Result<Step> {
    if !rho.is_finite() || !delta_hat.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite step inputs rho={rho}, delta_hat={delta_hat}"
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0,1), got {eps}")));
    }
    let delta_hat_eps = delta_hat / (1.0 - eps).sqrt();
    if rho > 0.0 && delta_hat > 0.0 {
        let mut t = rho / ((rho + delta_hat_eps) * delta_hat_eps);
        // when rho dwarfs delta, rho + delta rounds to rho and t*delta to 1
        if t * delta_hat_eps >= 1.0 {
            t = (1.0 - f64::EPSILON) / delta_hat_eps;
        }
        buffer.push(t);
        return Ok(Step {
            t,
            fallback: false,
            delta_hat_eps,
        });
    }
    let t = match buffer.median() {
        Some(m) => m,
        None if delta_hat > 0.0 => 1.0 / delta_hat,
        None => bootstrap,
    };
    Ok(Step {
        t,
        fallback: true,
        delta_hat_eps,
    })
}

/// `omega(z) = z - ln(1 + z)` for `z > -1`.
pub fn omega(z: f64) -> Result<f64> {
    if !(z > -1.0) {
        return Err(Error::InvalidArgument(format!("omega needs z > -1, got {z}")));
    }
    Ok(z - z.ln_1p())
}

/// `Delta(delta, t) = (delta + rho) t + ln(1 - delta t)` for `t < 1/delta`:
/// the decrease guaranteed by a step `t`. Maximized at the optimal step,
/// where it equals `omega(rho / delta)`.
pub fn decrease_gap(delta: f64, rho: f64, t: f64) -> Result<f64> {
    if !(delta * t < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decrease gap needs t < 1/delta, got delta={delta}, t={t}"
        )));
    }
    Ok((delta + rho) * t + (-delta * t).ln_1p())
}

/// Rate constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConstants {
    /// Decrease coefficient: `F(x+) <= F(x) - alpha/2 |grad F(x)|^2`.
    pub alpha: f64,
    /// Linear rate `1 - m alpha` under the acute-angle and curvature tests.
    pub rho_rate: f64,
    /// Linear rate under norm-accurate gradient and Hessian sampling.
    pub rho_rate_concentration: f64,
}

/// `M` is the per-sample smoothness bound, which covers every sub-sampled
/// Hessian as well as the full one.
pub fn convergence_constants(constants: &ProblemConstants, nu: f64, eps: f64) -> Result<ConvergenceConstants> {
    if !(0.0..1.0).contains(&nu) || !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "nu and eps must lie in [0,1), got {nu}, {eps}"
        )));
    }
    let m = constants.m_lower;
    let big_m = constants.m_upper_per_sample.max(constants.m_upper);
    let scale = big_m * (1.0 + constants.gamma / m.sqrt());
    let alpha = (1.0 - nu * nu) * (1.0 - eps) / scale;
    let concentration =
        m * (1.0 - nu).powi(2) * (1.0 - eps) / (2.0 * (1.0 + nu * nu) * scale);
    Ok(ConvergenceConstants {
        alpha,
        rho_rate: 1.0 - m * alpha,
        rho_rate_concentration: 1.0 - concentration,
    })
}

/// Analysis-grade batch sizes. Never used by the optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBounds {
    /// `16 kappa^2 ln(2n/p) / eps^2`
    pub hess_bound: f64,
    /// `(G / (|g_S| nu))^2 (1 + sqrt(8 ln(1/delta)))^2`
    pub grad_bound: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn idealized_sample_bounds(
    constants: &ProblemConstants,
    n: usize,
    p: f64,
    eps: f64,
    nu: f64,
    delta: f64,
    g_bound: f64,
    g_norm: f64,
) -> Result<SampleBounds> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension n must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p and eps must lie in (0,1), got {p}, {eps}"
        )));
    }
    if !(nu > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need nu > 0 and delta in (0,1], got {nu}, {delta}"
        )));
    }
    if !(g_norm > 0.0) || !(g_bound >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need |g_S| > 0 and G >= 0, got {g_norm}, {g_bound}"
        )));
    }
    let kappa = constants.kappa;
    let hess = 16.0 * kappa * kappa * (2.0 * n as f64 / p).ln() / (eps * eps);
    let grad = (g_bound / (g_norm * nu)).powi(2) * (1.0 + (8.0 * (1.0 / delta).ln()).sqrt()).powi(2);
    Ok(SampleBounds {
        hess_bound: ceil_guarded(hess),
        grad_bound: ceil_guarded(grad),
    })
}
