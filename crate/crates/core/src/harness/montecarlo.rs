//! Monte-Carlo check of the acute-angle test's probability guarantee.
//!
//! Batches are drawn with replacement from a finite population whose mean
//! gradient `g` is known exactly. Among batches that pass the exact test
//! (statistic against `g` at most `p nu^2`), the fraction whose batch
//! gradient makes `sin^2 > nu^2` with `g` must not exceed `p`, up to a
//! three-sigma binomial margin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sampling::{ceil_guarded, GradientSamples, exact_angle_statistic, sin2_angle, DEGENERATE_NORM};
use crate::vecops::{dot, norm, norm_sq};

/// ChaCha stream ids for building the population and drawing batches.
pub const POPULATION_STREAM: u64 = 2;
pub const TRIAL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovReport {
    pub trials: usize,
    pub batch_size: usize,
    /// Batches passing the exact test.
    pub accepted: usize,
    /// Accepted batches with `sin^2 > nu^2`.
    pub violations: usize,
    pub frequency: f64,
    /// `p + 3 sqrt(p(1-p)/trials)`
    pub bound: f64,
    pub passed: bool,
}

fn mean(population: &[Vec<f64>]) -> Vec<f64> {
    let d = population[0].len();
    let mut g = vec![0.0; d];
    for v in population {
        for (a, b) in g.iter_mut().zip(v) {
            *a += b;
        }
    }
    let inv = 1.0 / population.len() as f64;
    g.iter_mut().for_each(|a| *a *= inv);
    g
}

struct Drawn<'a> {
    population: &'a [Vec<f64>],
    indices: &'a [usize],
}

impl GradientSamples for Drawn<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn sq_norm(&self, k: usize) -> f64 {
        norm_sq(&self.population[self.indices[k]])
    }
    fn dot(&self, k: usize, v: &[f64]) -> f64 {
        dot(&self.population[self.indices[k]], v)
    }
}

/// Batch size at which the expected exact statistic sits at the threshold,
/// so roughly half the batches pass: `E|g_i^perp|^2 / (|g|^2 p nu^2)`.
fn calibrated_batch_size(population: &[Vec<f64>], g: &[f64], p: f64, nu: f64) -> usize {
    let g_sq = norm_sq(g);
    let u: Vec<f64> = g.iter().map(|v| v / g_sq.sqrt()).collect();
    let orth = population
        .iter()
        .map(|v| {
            let along = dot(v, &u);
            (norm_sq(v) - along * along).max(0.0)
        })
        .sum::<f64>()
        / population.len() as f64;
    (ceil_guarded(orth / (g_sq * p * nu * nu)) as usize).max(2)
}

/// Runs the suite on an explicit population of per-sample gradients.
pub fn markov_suite_on(population: &[Vec<f64>], trials: usize, p: f64, nu: f64, seed: u64) -> Result<MarkovReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) || !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidArgument(format!("p and nu must lie in (0,1), got {p}, {nu}")));
    }
    if population.len() < 2 {
        return Err(Error::TooFewSamples(population.len()));
    }
    let d = population[0].len();
    if let Some(bad) = population.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let g = mean(population);
    if norm(&g) < DEGENERATE_NORM {
        return Err(Error::Degenerate(norm(&g)));
    }
    let batch_size = calibrated_batch_size(population, &g, p, nu);
    let threshold = p * nu * nu;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRIAL_STREAM);
    let mut indices = vec![0usize; batch_size];
    let mut g_s = vec![0.0; d];
    let (mut accepted, mut violations) = (0, 0);
    for _ in 0..trials {
        indices.iter_mut().for_each(|i| *i = rng.random_range(0..population.len()));
        g_s.iter_mut().for_each(|v| *v = 0.0);
        for &i in &indices {
            for (a, b) in g_s.iter_mut().zip(&population[i]) {
                *a += b;
            }
        }
        g_s.iter_mut().for_each(|v| *v /= batch_size as f64);
        if norm(&g_s) < DEGENERATE_NORM {
            continue;
        }
        let batch = Drawn {
            population,
            indices: &indices,
        };
        if exact_angle_statistic(&batch, &g_s, &g)? <= threshold {
            accepted += 1;
            if sin2_angle(&g_s, &g) > nu * nu {
                violations += 1;
            }
        }
    }
    let frequency = if accepted == 0 {
        0.0
    } else {
        violations as f64 / accepted as f64
    };
    let bound = p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    Ok(MarkovReport {
        trials,
        batch_size,
        accepted,
        violations,
        frequency,
        bound,
        // no accepted batch means the conditional frequency is undefined
        passed: accepted > 0 && frequency <= bound,
    })
}

/// Gaussian population of 500 per-sample gradients in 10 dimensions around
/// a unit mean, noise scale 0.3.
pub fn gaussian_population(seed: u64) -> Vec<Vec<f64>> {
    const SIZE: usize = 500;
    const DIM: usize = 10;
    const NOISE: f64 = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POPULATION_STREAM);
    let mut center: Vec<f64> = (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let c = norm(&center);
    center.iter_mut().for_each(|v| *v /= c);
    (0..SIZE)
        .map(|_| {
            center
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + NOISE * z
                })
                .collect()
        })
        .collect()
}

pub fn montecarlo_markov_suite(trials: usize, p: f64, nu: f64, seed: u64) -> Result<MarkovReport> {
    markov_suite_on(&gaussian_population(seed), trials, p, nu, seed)
}
