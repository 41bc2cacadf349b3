//! Finite-difference verification of the analytic gradient and HVP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelState, Subset};
use crate::vecops::{norm, norm_sq};

/// ChaCha stream id for the random states and directions.
pub const CHECK_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub n_states: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Perturbs the analytic gradient so the failure path can be exercised.
    pub corrupt_gradient: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            n_states: 20,
            seed: 0,
            tolerance: 1e-5,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub n_states: usize,
    pub max_grad_rel_err: f64,
    pub max_hvp_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(approx: &[f64], exact: &[f64]) -> f64 {
    let diff: Vec<f64> = approx.iter().zip(exact).map(|(a, b)| a - b).collect();
    let scale = norm(approx).max(norm(exact)).max(1e-12);
    norm(&diff) / scale
}

fn shifted(state: &ModelState, v: &[f64], h: f64) -> ModelState {
    let x = state.x.iter().zip(v).map(|(x, v)| x + h * v).collect();
    ModelState { x, lambda: state.lambda }
}

fn fd_gradient(state: &ModelState, data: &SparseDataset) -> Result<Vec<f64>> {
    let d = state.x.len();
    let h = 1e-5 * (1.0 + norm(&state.x));
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let up = model::loss(&shifted(state, &e, h), data, Subset::All)?;
        let down = model::loss(&shifted(state, &e, -h), data, Subset::All)?;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn fd_hvp(state: &ModelState, data: &SparseDataset, v: &[f64]) -> Result<Vec<f64>> {
    let h = 1e-4 * (1.0 + norm(&state.x)) / norm(v);
    let up = model::grad(&shifted(state, v, h), data, Subset::All)?;
    let down = model::grad(&shifted(state, v, -h), data, Subset::All)?;
    Ok(up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Compares analytic and central-difference derivatives at `n_states`
/// states: the origin, then Gaussian draws. Each HVP uses a fresh random
/// direction.
pub fn finite_difference_check(data: &SparseDataset, lambda: f64, opts: &CheckOptions) -> Result<CheckReport> {
    if opts.n_states == 0 {
        return Err(Error::InvalidArgument("n_states must be >= 1".into()));
    }
    let d = data.n_features();
    if d == 0 {
        return Err(Error::InvalidDataset("no features to check".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(CHECK_STREAM);
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let mut max_grad: f64 = 0.0;
    let mut max_hvp: f64 = 0.0;
    for s in 0..opts.n_states {
        let x = if s == 0 { vec![0.0; d] } else { gauss(d) };
        let state = ModelState::new(x, lambda)?;
        let mut g = model::grad(&state, data, Subset::All)?;
        if opts.corrupt_gradient {
            g[0] += 1e-3 * (1.0 + norm_sq(&g).sqrt());
        }
        max_grad = max_grad.max(rel_err(&fd_gradient(&state, data)?, &g));

        let v = gauss(d);
        let hv = model::hvp(&state, data, Subset::All, &v)?;
        max_hvp = max_hvp.max(rel_err(&fd_hvp(&state, data, &v)?, &hv));
    }
    Ok(CheckReport {
        n_states: opts.n_states,
        max_grad_rel_err: max_grad,
        max_hvp_rel_err: max_hvp,
        tolerance: opts.tolerance,
        passed: max_grad <= opts.tolerance && max_hvp <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_logistic;

    #[test]
    fn synthetic_fixture_passes() {
        let data = synthetic_logistic(200, 6, 1.0, 4).unwrap();
        let r = finite_difference_check(&data, 0.01, &CheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let data = synthetic_logistic(200, 6, 1.0, 4).unwrap();
        let opts = CheckOptions {
            corrupt_gradient: true,
            ..Default::default()
        };
        let r = finite_difference_check(&data, 0.01, &opts).unwrap();
        assert!(!r.passed);
        assert!(r.max_hvp_rel_err <= 1e-5);
    }

    #[test]
    fn zero_states_rejected() {
        let data = synthetic_logistic(20, 2, 1.0, 4).unwrap();
        let opts = CheckOptions {
            n_states: 0,
            ..Default::default()
        };
        assert!(finite_difference_check(&data, 0.01, &opts).is_err());
    }
}
