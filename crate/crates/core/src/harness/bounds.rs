//! Theory-side constants for a given problem description.

use crate::error::Result;
use crate::model::ProblemConstants;
use crate::stepsize::{convergence_constants, idealized_sample_bounds, ConvergenceConstants, SampleBounds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsInput {
    pub m_lower: f64,
    pub m_upper: f64,
    pub gamma: f64,
    pub n: usize,
    pub p: f64,
    pub eps: f64,
    pub nu: f64,
    pub delta: f64,
    pub g_bound: f64,
    pub g_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsReport {
    pub kappa: f64,
    pub rates: ConvergenceConstants,
    /// `Err` text when the inputs fall outside the bounds' domain.
    pub samples: std::result::Result<SampleBounds, &'static str>,
}

pub fn bounds_report(input: &BoundsInput) -> Result<BoundsReport> {
    let constants = ProblemConstants::new(input.m_lower, input.m_upper, input.gamma)?;
    let rates = convergence_constants(&constants, input.nu, input.eps)?;
    let samples = idealized_sample_bounds(
        &constants,
        input.n,
        input.p,
        input.eps,
        input.nu,
        input.delta,
        input.g_bound,
        input.g_norm,
    )
    .map_err(|_| "undefined: need p, eps in (0,1), nu > 0, delta in (0,1], |g_S| > 0");
    Ok(BoundsReport {
        kappa: constants.kappa,
        rates,
        samples,
    })
}
