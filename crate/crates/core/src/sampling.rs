//! Batch-size control.
//!
//! Two variance tests decide whether the current batch `S_k` is large
//! enough:
//!
//! * the acute-angle test keeps the normalized sampled gradient close to its
//!   projection on the (running-average estimate of the) true gradient;
//! * the curvature test keeps the sampled curvature `g' H_S g` close to its
//!   population value.
//!
//! When either fails, the batch is grown to the larger of the two proposed
//! sizes by drawing extra samples uniformly with replacement. The norm,
//! inner-product and augmented inner-product tests are here too, for the
//! baseline optimizers.

use rand::Rng;

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelState, PerSampleGrads, Subset};
use crate::vecops::{dot, norm, norm_sq};

/// Gradient norms below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Read access to a collection of per-sample gradients.
pub trait GradientSamples {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn sq_norm(&self, k: usize) -> f64;
    fn dot(&self, k: usize, v: &[f64]) -> f64;
}

impl GradientSamples for PerSampleGrads<'_> {
    fn len(&self) -> usize {
        PerSampleGrads::len(self)
    }
    fn sq_norm(&self, k: usize) -> f64 {
        PerSampleGrads::sq_norm(self, k)
    }
    fn dot(&self, k: usize, v: &[f64]) -> f64 {
        PerSampleGrads::dot(self, k, v)
    }
}

impl GradientSamples for [Vec<f64>] {
    fn len(&self) -> usize {
        <[Vec<f64>]>::len(self)
    }
    fn sq_norm(&self, k: usize) -> f64 {
        norm_sq(&self[k])
    }
    fn dot(&self, k: usize, v: &[f64]) -> f64 {
        dot(&self[k], v)
    }
}

impl GradientSamples for Vec<Vec<f64>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn sq_norm(&self, k: usize) -> f64 {
        norm_sq(&self[k])
    }
    fn dot(&self, k: usize, v: &[f64]) -> f64 {
        dot(&self[k], v)
    }
}

/// `ceil` that ignores round-off just above an integer (relative 1e-12), so
/// closed-form sizes such as `2 / (0.1 * 0.1^2)` land on 2000.
pub fn ceil_guarded(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    (x - x.abs() * 1e-12).ceil()
}

/// Turns a raw proposal into a batch size in `[current, max_batch]`.
pub fn clamp_proposal(raw: f64, current: usize, max_batch: usize) -> usize {
    let upper = max_batch.max(current);
    if !(raw > current as f64) {
        return current;
    }
    let rounded = ceil_guarded(raw);
    if rounded >= upper as f64 {
        upper
    } else {
        (rounded as usize).max(current)
    }
}

fn require_pair(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    Ok(())
}

fn require_nonzero(v: &[f64]) -> Result<f64> {
    let n = norm(v);
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::Degenerate(n));
    }
    Ok(n)
}

/// `sum_i | g_i/|g_k| - (g_i.u / |g_k|) u |^2` with `u = g_avg/|g_avg|`.
fn acute_angle_sum<S: GradientSamples + ?Sized>(samples: &S, g_k: &[f64], g_avg: &[f64]) -> Result<f64> {
    require_pair(samples.len())?;
    let gk_norm = require_nonzero(g_k)?;
    let avg_norm = require_nonzero(g_avg)?;
    let u: Vec<f64> = g_avg.iter().map(|v| v / avg_norm).collect();
    let total: f64 = (0..samples.len())
        .map(|k| {
            let along = samples.dot(k, &u);
            (samples.sq_norm(k) - along * along).max(0.0)
        })
        .sum();
    Ok(total / (gk_norm * gk_norm))
}

/// Approximate acute-angle statistic; the test passes when it is at most
/// `p * nu^2`.
pub fn acute_angle_statistic<S: GradientSamples + ?Sized>(
    samples: &S,
    g_k: &[f64],
    g_avg: &[f64],
) -> Result<f64> {
    let n = samples.len() as f64;
    Ok(acute_angle_sum(samples, g_k, g_avg)? / (n * (n - 1.0)))
}

/// Unrounded gradient batch size that would satisfy the acute-angle test.
pub fn raw_grad_size<S: GradientSamples + ?Sized>(
    samples: &S,
    g_k: &[f64],
    g_avg: &[f64],
    p: f64,
    nu: f64,
) -> Result<f64> {
    let n = samples.len() as f64;
    Ok(acute_angle_sum(samples, g_k, g_avg)? / ((n - 1.0) * p * nu * nu))
}

pub fn grad_size_proposal<S: GradientSamples + ?Sized>(
    samples: &S,
    g_k: &[f64],
    g_avg: &[f64],
    p: f64,
    nu: f64,
    max_batch: usize,
) -> Result<usize> {
    let raw = raw_grad_size(samples, g_k, g_avg, p, nu)?;
    Ok(clamp_proposal(raw, samples.len(), max_batch))
}

/// Sampled angle statistic measured against a known true gradient. This is
/// the quantity bounded by the exact test, for use in verification only.
pub fn exact_angle_statistic<S: GradientSamples + ?Sized>(
    samples: &S,
    g_k: &[f64],
    g_true: &[f64],
) -> Result<f64> {
    acute_angle_statistic(samples, g_k, g_true)
}

/// `sin^2` of the angle between two nonzero vectors.
pub fn sin2_angle(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b);
    (1.0 - c * c / (norm_sq(a) * norm_sq(b))).max(0.0)
}

fn hessian_sum(curvatures: &[f64], delta_hat_sq: f64) -> Result<f64> {
    require_pair(curvatures.len())?;
    if !(delta_hat_sq > 0.0) {
        return Err(Error::NonPositiveCurvature(delta_hat_sq));
    }
    let d4 = delta_hat_sq * delta_hat_sq;
    Ok(curvatures
        .iter()
        .map(|c| (c - delta_hat_sq).powi(2))
        .sum::<f64>()
        / d4)
}

/// Curvature statistic over per-sample curvatures `g' H_i g` around their
/// mean `delta_hat_sq`; passes when at most `p * eps^2`.
pub fn hessian_statistic(curvatures: &[f64], delta_hat_sq: f64) -> Result<f64> {
    let n = curvatures.len() as f64;
    Ok(hessian_sum(curvatures, delta_hat_sq)? / (n * (n - 1.0)))
}

pub fn raw_hess_size(curvatures: &[f64], delta_hat_sq: f64, p: f64, eps: f64) -> Result<f64> {
    let n = curvatures.len() as f64;
    Ok(hessian_sum(curvatures, delta_hat_sq)? / (eps * eps * (n - 1.0) * p))
}

pub fn hess_size_proposal(
    curvatures: &[f64],
    delta_hat_sq: f64,
    p: f64,
    eps: f64,
    max_batch: usize,
) -> Result<usize> {
    let raw = raw_hess_size(curvatures, delta_hat_sq, p, eps)?;
    Ok(clamp_proposal(raw, curvatures.len(), max_batch))
}

/// Comparator tests used by the baseline optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineTest {
    Norm,
    InnerProduct,
    Augmented,
}

/// Statistic, raw proposal, and pass flag of a baseline test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOutcome {
    pub statistic: f64,
    pub raw_proposal: f64,
    pub passed: bool,
}

struct Spread {
    n: f64,
    g_sq: f64,
    /// sum_i |g_i - g_S|^2
    total: f64,
    /// sum_i (g_i.g_S - |g_S|^2)^2
    inner: f64,
    /// sum_i |g_i - (g_i.g_S / |g_S|^2) g_S|^2
    orth: f64,
}

fn spread<S: GradientSamples + ?Sized>(samples: &S, g_s: &[f64]) -> Result<Spread> {
    require_pair(samples.len())?;
    let g_norm = require_nonzero(g_s)?;
    let g_sq = g_norm * g_norm;
    let mut s = Spread {
        n: samples.len() as f64,
        g_sq,
        total: 0.0,
        inner: 0.0,
        orth: 0.0,
    };
    for k in 0..samples.len() {
        let sq = samples.sq_norm(k);
        let ip = samples.dot(k, g_s);
        s.total += (sq - 2.0 * ip + g_sq).max(0.0);
        s.inner += (ip - g_sq).powi(2);
        s.orth += (sq - ip * ip / g_sq).max(0.0);
    }
    Ok(s)
}

fn outcome(statistic: f64, n: f64, threshold: f64) -> BaselineOutcome {
    BaselineOutcome {
        statistic,
        raw_proposal: n * statistic / threshold,
        passed: statistic <= threshold,
    }
}

/// Norm test: `var(g_i) / (|S| |g_S|^2) <= theta^2`.
pub fn norm_test<S: GradientSamples + ?Sized>(samples: &S, g_s: &[f64], theta: f64) -> Result<BaselineOutcome> {
    let s = spread(samples, g_s)?;
    let var = s.total / (s.n - 1.0);
    Ok(outcome(var / (s.n * s.g_sq), s.n, theta * theta))
}

/// Inner-product test: `var(g_i.g_S) / (|S| |g_S|^4) <= theta^2`.
pub fn inner_product_test<S: GradientSamples + ?Sized>(
    samples: &S,
    g_s: &[f64],
    theta: f64,
) -> Result<BaselineOutcome> {
    let s = spread(samples, g_s)?;
    let var = s.inner / (s.n - 1.0);
    Ok(outcome(var / (s.n * s.g_sq * s.g_sq), s.n, theta * theta))
}

/// Inner-product test plus the orthogonality condition
/// `var(g_i - proj_{g_S} g_i) / (|S| |g_S|^2) <= theta^2`. Reports the larger
/// of the two statistics and proposals.
pub fn augmented_inner_product_test<S: GradientSamples + ?Sized>(
    samples: &S,
    g_s: &[f64],
    theta: f64,
) -> Result<BaselineOutcome> {
    let s = spread(samples, g_s)?;
    let thr = theta * theta;
    let inner = outcome(s.inner / (s.n - 1.0) / (s.n * s.g_sq * s.g_sq), s.n, thr);
    let orth = outcome(s.orth / (s.n - 1.0) / (s.n * s.g_sq), s.n, thr);
    Ok(BaselineOutcome {
        statistic: inner.statistic.max(orth.statistic),
        raw_proposal: inner.raw_proposal.max(orth.raw_proposal),
        passed: inner.passed && orth.passed,
    })
}

pub fn baseline_test<S: GradientSamples + ?Sized>(
    test: BaselineTest,
    samples: &S,
    g_s: &[f64],
    theta: f64,
) -> Result<BaselineOutcome> {
    match test {
        BaselineTest::Norm => norm_test(samples, g_s, theta),
        BaselineTest::InnerProduct => inner_product_test(samples, g_s, theta),
        BaselineTest::Augmented => augmented_inner_product_test(samples, g_s, theta),
    }
}

/// `(statistic, clamped proposal)` for the norm test.
pub fn norm_test_proposal<S: GradientSamples + ?Sized>(
    samples: &S,
    g_s: &[f64],
    theta: f64,
    max_batch: usize,
) -> Result<(f64, usize)> {
    let o = norm_test(samples, g_s, theta)?;
    Ok((o.statistic, clamp_proposal(o.raw_proposal, samples.len(), max_batch)))
}

pub fn inner_product_test_proposal<S: GradientSamples + ?Sized>(
    samples: &S,
    g_s: &[f64],
    theta: f64,
    max_batch: usize,
) -> Result<(f64, usize)> {
    let o = inner_product_test(samples, g_s, theta)?;
    Ok((o.statistic, clamp_proposal(o.raw_proposal, samples.len(), max_batch)))
}

pub fn augmented_inner_product_test_proposal<S: GradientSamples + ?Sized>(
    samples: &S,
    g_s: &[f64],
    theta: f64,
    max_batch: usize,
) -> Result<(f64, usize)> {
    let o = augmented_inner_product_test(samples, g_s, theta)?;
    Ok((o.statistic, clamp_proposal(o.raw_proposal, samples.len(), max_batch)))
}

/// How the failure probability `p` shrinks over iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PSchedule {
    /// Multiply by `factor` every `every` iterations.
    Geometric { factor: f64, every: usize },
    /// `p_k = p_0 / (k + 1)^2`
    InverseSquare,
}

impl Default for PSchedule {
    fn default() -> Self {
        PSchedule::Geometric {
            factor: 0.9,
            every: 10,
        }
    }
}

impl PSchedule {
    fn validate(&self) -> Result<()> {
        match *self {
            PSchedule::Geometric { factor, every } => {
                if !(factor > 0.0 && factor <= 1.0) || every == 0 {
                    return Err(Error::Config(format!(
                        "geometric p schedule needs factor in (0,1] and every >= 1, got {factor}, {every}"
                    )));
                }
            }
            PSchedule::InverseSquare => {}
        }
        Ok(())
    }

    /// `p_k` for this schedule starting from `p0`.
    pub fn p_at(&self, p0: f64, k: usize) -> f64 {
        match *self {
            PSchedule::Geometric { factor, every } => p0 * factor.powi((k / every) as i32),
            PSchedule::InverseSquare => p0 / ((k + 1) as f64).powi(2),
        }
    }

    /// `prod_{k=1}^{n-1} (1 - p_k)^2`, the probability that both tests hold
    /// at every iteration up to `n`.
    pub fn cumulative_success(&self, p0: f64, n: usize) -> f64 {
        (1..n).map(|k| (1.0 - self.p_at(p0, k)).powi(2)).product()
    }
}

/// Outcome of one batch-size update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestReport {
    pub angle_statistic: f64,
    pub angle_threshold: f64,
    pub hessian_statistic: f64,
    pub hessian_threshold: f64,
    pub proposed_grad_size: usize,
    pub proposed_hess_size: usize,
    pub passed: bool,
    /// A gradient vanished, so no test could be evaluated.
    pub degenerate: bool,
}

impl TestReport {
    fn degenerate(current: usize, angle_threshold: f64, hessian_threshold: f64) -> Self {
        Self {
            angle_statistic: f64::NAN,
            angle_threshold,
            hessian_statistic: f64::NAN,
            hessian_threshold,
            proposed_grad_size: current,
            proposed_hess_size: current,
            passed: true,
            degenerate: true,
        }
    }
}

/// Tunables for a [`BatchController`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub p0: f64,
    pub nu: f64,
    pub eps: f64,
    pub beta_avg: f64,
    pub schedule: PSchedule,
    pub init_batch: usize,
    /// Upper bound on the batch size; `None` means the dataset size.
    pub max_batch: Option<usize>,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            p0: 0.1,
            nu: 0.1,
            eps: 0.01,
            beta_avg: 0.9,
            schedule: PSchedule::default(),
            init_batch: 16,
            max_batch: None,
        }
    }
}

/// Single-owner batch state for one run.
#[derive(Debug, Clone)]
pub struct BatchController {
    indices: Vec<usize>,
    p0: f64,
    p: f64,
    nu: f64,
    eps: f64,
    beta_avg: f64,
    schedule: PSchedule,
    g_avg: Option<Vec<f64>>,
    n_samples: usize,
    max_batch: usize,
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("{name} must lie in (0,1), got {v}")));
    }
    Ok(())
}

impl BatchController {
    /// Draws an initial batch of `params.init_batch` indices.
    pub fn new<R: Rng + ?Sized>(params: &ControllerParams, n_samples: usize, rng: &mut R) -> Result<Self> {
        let mut c = Self::build(params, n_samples)?;
        c.draw(params.init_batch, rng);
        Ok(c)
    }

    fn build(params: &ControllerParams, n_samples: usize) -> Result<Self> {
        open_unit("p", params.p0)?;
        open_unit("nu", params.nu)?;
        open_unit("eps", params.eps)?;
        if !(params.beta_avg >= 0.0 && params.beta_avg < 1.0) {
            return Err(Error::Config(format!(
                "beta_avg must lie in [0,1), got {}",
                params.beta_avg
            )));
        }
        params.schedule.validate()?;
        if n_samples == 0 {
            return Err(Error::EmptyDataset);
        }
        let max_batch = params.max_batch.unwrap_or(n_samples);
        if max_batch == 0 || max_batch > n_samples {
            return Err(Error::Config(format!(
                "max_batch must lie in [1, {n_samples}], got {max_batch}"
            )));
        }
        if params.init_batch == 0 || params.init_batch > max_batch {
            return Err(Error::Config(format!(
                "init_batch must lie in [1, {max_batch}], got {}",
                params.init_batch
            )));
        }
        Ok(Self {
            indices: Vec::with_capacity(params.init_batch),
            p0: params.p0,
            p: params.p0,
            nu: params.nu,
            eps: params.eps,
            beta_avg: params.beta_avg,
            schedule: params.schedule,
            g_avg: None,
            n_samples,
            max_batch,
        })
    }

    /// Every sample, exactly once; the tests never change it.
    pub fn full(params: &ControllerParams, n_samples: usize) -> Result<Self> {
        let mut c = Self::build(
            &ControllerParams {
                init_batch: 1,
                max_batch: None,
                ..*params
            },
            n_samples,
        )?;
        c.indices = (0..n_samples).collect();
        Ok(c)
    }

    fn draw<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        for _ in 0..count {
            self.indices.push(rng.random_range(0..self.n_samples));
        }
    }

    /// Replaces the batch with fresh draws of the same size.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let size = self.indices.len();
        self.indices.clear();
        self.draw(size, rng);
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn g_avg(&self) -> Option<&[f64]> {
        self.g_avg.as_deref()
    }

    pub fn angle_threshold(&self) -> f64 {
        self.p * self.nu * self.nu
    }

    pub fn hessian_threshold(&self) -> f64 {
        self.p * self.eps * self.eps
    }

    /// Appends `target - |S|` uniform draws when `target` exceeds the
    /// current size.
    pub fn grow_to<R: Rng + ?Sized>(&mut self, target: usize, rng: &mut R) {
        let target = target.min(self.max_batch.max(self.indices.len()));
        if target > self.indices.len() {
            self.draw(target - self.indices.len(), rng);
        }
    }

    /// Runs both tests on the current batch at `state` and grows the batch
    /// to `max(|S^g|, |S^h|)` if needed. The running average is only read;
    /// before the first update the batch gradient stands in for it.
    pub fn update_batch<R: Rng + ?Sized>(
        &mut self,
        state: &ModelState,
        data: &SparseDataset,
        rng: &mut R,
    ) -> Result<TestReport> {
        let current = self.indices.len();
        require_pair(current)?;
        let ps = model::per_sample_grads(state, data, Subset::Indices(&self.indices))?;
        let g_k = ps.mean();
        let g_ref = self.g_avg.as_deref().unwrap_or(&g_k);
        let angle_thr = self.angle_threshold();
        let hess_thr = self.hessian_threshold();
        if norm(&g_k) < DEGENERATE_NORM || norm(g_ref) < DEGENERATE_NORM {
            return Ok(TestReport::degenerate(current, angle_thr, hess_thr));
        }

        let angle_statistic = acute_angle_statistic(&ps, &g_k, g_ref)?;
        let proposed_grad_size = grad_size_proposal(&ps, &g_k, g_ref, self.p, self.nu, self.max_batch)?;

        let curv = model::per_sample_curvature(state, data, Subset::Indices(&self.indices), &g_k)?;
        let delta_sq = curv.iter().sum::<f64>() / curv.len() as f64;
        let (hessian_statistic, proposed_hess_size) = if delta_sq > 0.0 {
            (
                hessian_statistic(&curv, delta_sq)?,
                hess_size_proposal(&curv, delta_sq, self.p, self.eps, self.max_batch)?,
            )
        } else {
            // no curvature signal to test; the step falls back anyway
            (f64::NAN, current)
        };

        let report = TestReport {
            angle_statistic,
            angle_threshold: angle_thr,
            hessian_statistic,
            hessian_threshold: hess_thr,
            proposed_grad_size,
            proposed_hess_size,
            passed: angle_statistic <= angle_thr && !(hessian_statistic > hess_thr),
            degenerate: false,
        };
        self.grow_to(proposed_grad_size.max(proposed_hess_size), rng);
        Ok(report)
    }

    /// Same as [`update_batch`](Self::update_batch) but driven by one of the
    /// baseline tests with threshold `theta^2`. The statistic is reported in
    /// the angle fields.
    pub fn update_batch_baseline<R: Rng + ?Sized>(
        &mut self,
        test: BaselineTest,
        theta: f64,
        state: &ModelState,
        data: &SparseDataset,
        rng: &mut R,
    ) -> Result<TestReport> {
        let current = self.indices.len();
        require_pair(current)?;
        let ps = model::per_sample_grads(state, data, Subset::Indices(&self.indices))?;
        let g_s = ps.mean();
        let thr = theta * theta;
        if norm(&g_s) < DEGENERATE_NORM {
            return Ok(TestReport::degenerate(current, thr, f64::NAN));
        }
        let o = baseline_test(test, &ps, &g_s, theta)?;
        let proposal = clamp_proposal(o.raw_proposal, current, self.max_batch);
        self.grow_to(proposal, rng);
        Ok(TestReport {
            angle_statistic: o.statistic,
            angle_threshold: thr,
            hessian_statistic: f64::NAN,
            hessian_threshold: f64::NAN,
            proposed_grad_size: proposal,
            proposed_hess_size: current,
            passed: o.passed,
            degenerate: false,
        })
    }

    /// First call stores `g_k`; later calls blend with weight `beta_avg`.
    pub fn update_running_average(&mut self, g_k: &[f64]) {
        match &mut self.g_avg {
            None => self.g_avg = Some(g_k.to_vec()),
            Some(avg) => {
                let b = self.beta_avg;
                for (a, g) in avg.iter_mut().zip(g_k) {
                    *a = b * *a + (1.0 - b) * g;
                }
            }
        }
    }

    /// Applies the p schedule after `iteration` iterations have completed.
    pub fn decay_p(&mut self, iteration: usize) {
        match self.schedule {
            PSchedule::Geometric { factor, every } => {
                if iteration > 0 && iteration.is_multiple_of(every) {
                    self.p *= factor;
                }
            }
            PSchedule::InverseSquare => self.p = self.schedule.p_at(self.p0, iteration),
        }
        if !(self.p > 0.0) {
            self.p = f64::MIN_POSITIVE;
        }
    }
}
