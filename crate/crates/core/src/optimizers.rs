//! Optimization loops.
//!
//! Every adaptive variant shares one iteration:
//!
//! 1. redraw a batch of the current size, run the variance tests on it and
//!    grow it if they fail;
//! 2. compute the batch gradient `g_k` and fold it into the running average;
//! 3. build the variant's direction `d_k` (`-g_k`, the ADAM direction, or
//!    the momentum buffer);
//! 4. `rho_k = -d_k . g_ref`, `delta_k = sqrt(d_k' H_S d_k)`, step `t_k` from
//!    the step-size module;
//! 5. `x_{k+1} = x_k + t_k d_k`, then decay `p`.
//!
//! Runs are deterministic: all randomness comes from one ChaCha stream
//! seeded by `seed`, and batch draws are the only consumer.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelState, Subset};
use crate::sampling::{BaselineTest, BatchController, ControllerParams, PSchedule, TestReport};
use crate::stepsize::{self, FallbackBuffer, StepRecord, DEFAULT_BOOTSTRAP_STEP};
use crate::vecops::{axpy, dot, median, norm};

/// ChaCha stream id used for batch sampling.
pub const BATCH_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    AdaSgd,
    AdaAdam,
    AdaMomentum,
    SgdFixed,
    SgdNorm,
    SgdInner,
    SgdAugmented,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::AdaSgd,
        Variant::AdaAdam,
        Variant::AdaMomentum,
        Variant::SgdFixed,
        Variant::SgdNorm,
        Variant::SgdInner,
        Variant::SgdAugmented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AdaSgd => "ada-sgd",
            Variant::AdaAdam => "ada-adam",
            Variant::AdaMomentum => "ada-momentum",
            Variant::SgdFixed => "sgd-fixed",
            Variant::SgdNorm => "sgd-norm",
            Variant::SgdInner => "sgd-inner",
            Variant::SgdAugmented => "sgd-augmented",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Variant::AdaSgd | Variant::AdaAdam | Variant::AdaMomentum)
    }

    fn baseline_test(self) -> Option<BaselineTest> {
        match self {
            Variant::SgdNorm => Some(BaselineTest::Norm),
            Variant::SgdInner => Some(BaselineTest::InnerProduct),
            Variant::SgdAugmented => Some(BaselineTest::Augmented),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown optimizer {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// What `rho_k = -d_k . g_ref` measures the direction against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoMode {
    /// The running average of sampled gradients.
    RunningAverage,
    /// The batch gradient itself.
    Sampled,
    /// The full-dataset gradient (one extra data pass per iteration).
    Exact,
}

impl FromStr for RhoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "running-average" | "avg" => Ok(RhoMode::RunningAverage),
            "sampled" => Ok(RhoMode::Sampled),
            "exact" => Ok(RhoMode::Exact),
            _ => Err(Error::Config(format!(
                "unknown rho mode {s:?}; expected running-average, sampled or exact"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    PerIteration,
    /// Adaptive steps only for `probe_iters` iterations after each
    /// milestone, then the median probed step until the next one.
    Milestone,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "per-iteration" => Ok(Mode::PerIteration),
            "milestone" => Ok(Mode::Milestone),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?}; expected per-iteration or milestone"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub variant: Variant,
    pub p0: f64,
    pub nu: f64,
    pub eps: f64,
    pub init_batch: usize,
    pub max_iters: usize,
    /// Required by `sgd-*` variants; used before the first milestone in
    /// milestone mode.
    pub fixed_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    /// ADAM's denominator offset.
    pub eps_prime: f64,
    pub beta_avg: f64,
    pub seed: u64,
    pub p_schedule: PSchedule,
    pub k_fallback: usize,
    pub mode: Mode,
    pub milestones: Vec<usize>,
    pub probe_iters: usize,
    /// `None` means `1/N`.
    pub lambda: Option<f64>,
    /// Baseline test threshold; `None` means `nu`.
    pub theta: Option<f64>,
    /// `None` picks the default: the batch gradient for ADAM and for full
    /// batches, the running average otherwise.
    pub rho_mode: Option<RhoMode>,
    /// Use every sample exactly once per iteration; disables the tests.
    pub full_batch: bool,
    pub max_batch: Option<usize>,
    /// Stop once this many per-sample gradients have been evaluated.
    pub max_samples: Option<u64>,
    /// Full-dataset loss every this many iterations; 0 disables it.
    pub eval_every: usize,
    /// Stop when `|g_avg| <= tolerance * (1 + |F_S|)`.
    pub tolerance: f64,
    pub bootstrap_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::AdaSgd,
            p0: 0.1,
            nu: 0.1,
            eps: 0.01,
            init_batch: 16,
            max_iters: 1000,
            fixed_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps_prime: 1e-8,
            beta_avg: 0.9,
            seed: 0,
            p_schedule: PSchedule::default(),
            k_fallback: 20,
            mode: Mode::PerIteration,
            milestones: Vec::new(),
            probe_iters: 20,
            lambda: None,
            theta: None,
            rho_mode: None,
            full_batch: false,
            max_batch: None,
            max_samples: None,
            eval_every: 10,
            tolerance: 1e-8,
            bootstrap_step: DEFAULT_BOOTSTRAP_STEP,
        }
    }
}

impl OptimizerConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Default::default()
        }
    }

    pub fn lambda_for(&self, data: &SparseDataset) -> f64 {
        self.lambda.unwrap_or(1.0 / data.n_samples() as f64)
    }

    /// A full batch gradient is the true gradient, so the surrogate is only
    /// used for mini-batches.
    pub fn effective_rho_mode(&self) -> RhoMode {
        self.rho_mode.unwrap_or(match (self.variant, self.full_batch) {
            (Variant::AdaAdam, _) | (_, true) => RhoMode::Sampled,
            _ => RhoMode::RunningAverage,
        })
    }

    fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            p0: self.p0,
            nu: self.nu,
            eps: self.eps,
            beta_avg: self.beta_avg,
            schedule: self.p_schedule,
            init_batch: self.init_batch,
            max_batch: self.max_batch,
        }
    }

    pub fn validate(&self, data: &SparseDataset) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta_avg", self.beta_avg)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if !(self.eps_prime >= 0.0) {
            return bad(format!("eps_prime must be >= 0, got {}", self.eps_prime));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda must be finite and >= 0, got {l}"));
            }
        }
        if let Some(lr) = self.fixed_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("fixed_lr must be finite and >= 0, got {lr}"));
            }
        }
        if let Some(theta) = self.theta {
            if !(theta > 0.0) {
                return bad(format!("theta must be > 0, got {theta}"));
            }
        }
        if !(self.bootstrap_step > 0.0) {
            return bad(format!("bootstrap_step must be > 0, got {}", self.bootstrap_step));
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance must be >= 0, got {}", self.tolerance));
        }
        match (self.variant.is_adaptive(), self.fixed_lr) {
            (false, None) => return bad(format!("{} needs fixed_lr", self.variant)),
            (true, Some(_)) if self.mode == Mode::PerIteration => {
                return bad(format!("fixed_lr is only valid for sgd-* variants or milestone mode, not {}", self.variant))
            }
            _ => {}
        }
        if self.mode == Mode::Milestone {
            if !self.variant.is_adaptive() {
                return bad("milestone mode needs an adaptive variant".into());
            }
            if self.full_batch {
                return bad("milestone mode keeps a fixed mini-batch; full_batch is not allowed".into());
            }
            if self.probe_iters == 0 {
                return bad("probe_iters must be >= 1".into());
            }
            if self.milestones.first() != Some(&0) && self.fixed_lr.is_none() {
                return bad("milestone mode needs a milestone at 0 or a fixed_lr for the first stretch".into());
            }
        } else if !self.milestones.is_empty() {
            return bad("milestones are only used in milestone mode".into());
        }
        if self.full_batch && !self.variant.is_adaptive() {
            return bad("full_batch is only supported for adaptive variants".into());
        }
        let needs_pairs = self.mode == Mode::PerIteration && self.variant != Variant::SgdFixed && !self.full_batch;
        if needs_pairs && self.init_batch < 2 {
            return bad(format!("variance tests need init_batch >= 2, got {}", self.init_batch));
        }
        if self.init_batch > data.n_samples() {
            return bad(format!(
                "init_batch {} exceeds the dataset size {}",
                self.init_batch,
                data.n_samples()
            ));
        }
        if self.variant.is_adaptive() {
            for (name, v) in [("p", self.p0), ("nu", self.nu), ("eps", self.eps)] {
                if !(v > 0.0 && v < 1.0) {
                    return bad(format!("{name} must lie in (0,1), got {v}"));
                }
            }
        }
        Ok(())
    }
}

/// ADAM moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub k: u32,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m_tilde: vec![0.0; dim],
            v_tilde: vec![0.0; dim],
            k: 0,
        }
    }

    /// Updates the moments with `g` and returns `-m_k / (sqrt(v_k) + eps')`
    /// using the bias corrections `1 - beta^(k+1)`.
    pub fn direction(&mut self, g: &[f64], beta1: f64, beta2: f64, eps_prime: f64) -> Vec<f64> {
        let c1 = 1.0 - beta1.powi(self.k as i32 + 1);
        let c2 = 1.0 - beta2.powi(self.k as i32 + 1);
        let mut d = Vec::with_capacity(g.len());
        for ((m, v), &gi) in self.m_tilde.iter_mut().zip(self.v_tilde.iter_mut()).zip(g) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            d.push(-m_hat / (v_hat.sqrt() + eps_prime));
        }
        self.k += 1;
        d
    }
}

/// Heavy-ball buffer `v_k = beta1 v_{k-1} + g_k`, no damping.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub v: Vec<f64>,
}

impl MomentumState {
    pub fn new(dim: usize) -> Self {
        Self { v: vec![0.0; dim] }
    }

    pub fn direction(&mut self, g: &[f64], beta1: f64) -> Vec<f64> {
        for (v, &gi) in self.v.iter_mut().zip(g) {
            *v = beta1 * *v + gi;
        }
        self.v.iter().map(|v| -v).collect()
    }
}

enum DirectionRule {
    Gradient,
    Adam(AdamState),
    Momentum(MomentumState),
}

impl DirectionRule {
    fn for_config(config: &OptimizerConfig, dim: usize) -> Self {
        match config.variant {
            Variant::AdaAdam => DirectionRule::Adam(AdamState::new(dim)),
            Variant::AdaMomentum => DirectionRule::Momentum(MomentumState::new(dim)),
            _ => DirectionRule::Gradient,
        }
    }

    fn next(&mut self, g: &[f64], config: &OptimizerConfig) -> Vec<f64> {
        match self {
            DirectionRule::Gradient => g.iter().map(|v| -v).collect(),
            DirectionRule::Adam(s) => s.direction(g, config.beta1, config.beta2, config.eps_prime),
            DirectionRule::Momentum(s) => s.direction(g, config.beta1),
        }
    }
}

/// One logged iteration, describing the state `x_k` before the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub samples_seen: u64,
    /// Full-dataset loss at `x_k`, when evaluated this iteration.
    pub loss: Option<f64>,
    pub grad_norm_avg: f64,
    pub step: StepRecord,
    pub p_current: f64,
    pub angle_stat: f64,
    pub hessian_stat: f64,
}

impl IterationRecord {
    pub fn batch_size(&self) -> usize {
        self.step.batch_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    MaxIters,
    Converged,
    SampleBudget,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::MaxIters => "max-iters",
            RunStatus::Converged => "converged",
            RunStatus::SampleBudget => "sample-budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub variant: Variant,
    pub records: Vec<IterationRecord>,
    pub final_state: ModelState,
    pub final_loss: f64,
    pub status: RunStatus,
    /// Largest `|g_avg|` seen, an estimate of the gradient bound.
    pub gamma_estimate: f64,
}

impl RunLog {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn samples_seen(&self) -> u64 {
        self.records.last().map_or(0, |r| r.samples_seen)
    }

    pub fn median_step(&self) -> Option<f64> {
        let steps: Vec<f64> = self.records.iter().map(|r| r.step.t).collect();
        median(&steps)
    }
}

fn initial_state(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<ModelState> {
    config.validate(data)?;
    let lambda = config.lambda_for(data);
    match initial_x {
        Some(x) if x.len() != data.n_features() => Err(Error::DimensionMismatch {
            expected: data.n_features(),
            got: x.len(),
        }),
        Some(x) => ModelState::new(x.to_vec(), lambda),
        None => ModelState::zeros(data.n_features(), lambda),
    }
}

fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BATCH_STREAM);
    rng
}

struct Tracker {
    records: Vec<IterationRecord>,
    samples_seen: u64,
    gamma: f64,
}

impl Tracker {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            samples_seen: 0,
            gamma: 0.0,
        }
    }

    fn eval_loss(&self, config: &OptimizerConfig, k: usize, state: &ModelState, data: &SparseDataset) -> Result<Option<f64>> {
        if config.eval_every > 0 && k.is_multiple_of(config.eval_every) {
            Ok(Some(model::loss(state, data, Subset::All)?))
        } else {
            Ok(None)
        }
    }

    fn over_budget(&self, config: &OptimizerConfig) -> bool {
        config.max_samples.is_some_and(|b| self.samples_seen >= b)
    }

    fn finish(self, variant: Variant, state: ModelState, data: &SparseDataset, status: RunStatus) -> Result<RunLog> {
        let final_loss = model::loss(&state, data, Subset::All)?;
        Ok(RunLog {
            variant,
            records: self.records,
            final_state: state,
            final_loss,
            status,
            gamma_estimate: self.gamma,
        })
    }
}

fn step_record(rho: f64, delta_hat: f64, step: stepsize::Step, batch_size: usize) -> StepRecord {
    StepRecord {
        rho,
        delta_hat,
        delta_hat_eps: step.delta_hat_eps,
        t: step.t,
        eta: if delta_hat > 0.0 { rho / delta_hat } else { f64::NAN },
        fallback: step.fallback,
        batch_size,
    }
}

/// `(rho, delta_hat)` for direction `d` on the current batch.
fn direction_measures(
    d: &[f64],
    g_ref: &[f64],
    state: &ModelState,
    data: &SparseDataset,
    batch: Subset<'_>,
) -> Result<(f64, f64)> {
    let rho = -dot(d, g_ref);
    let curvature = stepsize::curvature_along(state, data, batch, d)?;
    Ok((rho, curvature.max(0.0).sqrt()))
}

fn reference_gradient<'a>(
    mode: RhoMode,
    g_k: &'a [f64],
    controller: &'a BatchController,
    state: &ModelState,
    data: &SparseDataset,
    scratch: &'a mut Vec<f64>,
) -> Result<&'a [f64]> {
    Ok(match mode {
        RhoMode::RunningAverage => controller.g_avg().unwrap_or(g_k),
        RhoMode::Sampled => g_k,
        RhoMode::Exact => {
            *scratch = model::grad(state, data, Subset::All)?;
            scratch.as_slice()
        }
    })
}

fn run_per_iteration(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    let mut state = initial_state(config, data, initial_x)?;
    let mut rng = batch_rng(config.seed);
    let params = config.controller_params();
    let mut controller = if config.full_batch {
        BatchController::full(&params, data.n_samples())?
    } else {
        BatchController::new(&params, data.n_samples(), &mut rng)?
    };
    let mut buffer = FallbackBuffer::new(config.k_fallback)?;
    let mut rule = DirectionRule::for_config(config, data.n_features());
    let rho_mode = config.effective_rho_mode();
    let mut tracker = Tracker::new();
    let mut scratch = Vec::new();
    let mut status = RunStatus::MaxIters;

    for k in 0..config.max_iters {
        let report = if config.full_batch {
            None
        } else {
            controller.resample(&mut rng);
            let r = controller.update_batch(&state, data, &mut rng)?;
            if r.degenerate {
                status = RunStatus::Converged;
                break;
            }
            Some(r)
        };
        let batch = controller.indices().to_vec();
        let subset = Subset::Indices(&batch);
        let g_k = model::grad(&state, data, subset)?;
        controller.update_running_average(&g_k);
        let avg_norm = norm(controller.g_avg().expect("set above"));
        tracker.gamma = tracker.gamma.max(avg_norm);
        let batch_loss = model::loss(&state, data, subset)?;
        if avg_norm <= config.tolerance * (1.0 + batch_loss.abs()) || norm(&g_k) < crate::sampling::DEGENERATE_NORM {
            status = RunStatus::Converged;
            break;
        }

        let d = rule.next(&g_k, config);
        let g_ref = reference_gradient(rho_mode, &g_k, &controller, &state, data, &mut scratch)?;
        let (rho, delta_hat) = direction_measures(&d, g_ref, &state, data, subset)?;
        let step = stepsize::adaptive_step(rho, delta_hat, config.eps, &mut buffer, config.bootstrap_step)?;

        tracker.samples_seen += batch.len() as u64;
        let loss = tracker.eval_loss(config, k, &state, data)?;
        tracker.records.push(IterationRecord {
            iter: k,
            samples_seen: tracker.samples_seen,
            loss,
            grad_norm_avg: avg_norm,
            step: step_record(rho, delta_hat, step, batch.len()),
            p_current: controller.p(),
            angle_stat: report.map_or(f64::NAN, |r| r.angle_statistic),
            hessian_stat: report.map_or(f64::NAN, |r| r.hessian_statistic),
        });

        axpy(step.t, &d, &mut state.x);
        controller.decay_p(k + 1);
        if tracker.over_budget(config) {
            status = RunStatus::SampleBudget;
            break;
        }
    }
    tracker.finish(config.variant, state, data, status)
}

/// Ada-SGD: adaptive batch and step along `-g_k`.
pub fn run_ada_sgd(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    expect_variant(config, &[Variant::AdaSgd])?;
    run(config, data, initial_x)
}

/// Ada-ADAM: adaptive batch and step along the bias-corrected ADAM
/// direction; the curvature is sampled on the gradient batch.
pub fn run_ada_adam(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    expect_variant(config, &[Variant::AdaAdam])?;
    run(config, data, initial_x)
}

/// Ada-SGD with heavy-ball momentum, `v_0 = 0`.
pub fn run_ada_momentum(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    expect_variant(config, &[Variant::AdaMomentum])?;
    run(config, data, initial_x)
}

fn expect_variant(config: &OptimizerConfig, allowed: &[Variant]) -> Result<()> {
    if !allowed.contains(&config.variant) {
        return Err(Error::Config(format!("this entry point does not run {}", config.variant)));
    }
    Ok(())
}

/// Fixed-rate SGD, optionally growing its batch with a baseline test.
pub fn run_baseline(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    expect_variant(
        config,
        &[Variant::SgdFixed, Variant::SgdNorm, Variant::SgdInner, Variant::SgdAugmented],
    )?;
    let mut state = initial_state(config, data, initial_x)?;
    let lr = config.fixed_lr.expect("validated");
    let theta = config.theta.unwrap_or(config.nu);
    let mut rng = batch_rng(config.seed);
    let params = ControllerParams {
        // the baselines never read p, nu or eps; keep them valid
        p0: 0.5,
        nu: 0.5,
        eps: 0.5,
        ..config.controller_params()
    };
    let mut controller = BatchController::new(&params, data.n_samples(), &mut rng)?;
    let mut tracker = Tracker::new();
    let mut status = RunStatus::MaxIters;

    for k in 0..config.max_iters {
        controller.resample(&mut rng);
        let report: Option<TestReport> = match config.variant.baseline_test() {
            Some(test) => {
                let r = controller.update_batch_baseline(test, theta, &state, data, &mut rng)?;
                if r.degenerate {
                    status = RunStatus::Converged;
                    break;
                }
                Some(r)
            }
            None => None,
        };
        let batch = controller.indices().to_vec();
        let g_k = model::grad(&state, data, Subset::Indices(&batch))?;
        controller.update_running_average(&g_k);
        let avg_norm = norm(controller.g_avg().expect("set above"));
        tracker.gamma = tracker.gamma.max(avg_norm);

        tracker.samples_seen += batch.len() as u64;
        let loss = tracker.eval_loss(config, k, &state, data)?;
        tracker.records.push(IterationRecord {
            iter: k,
            samples_seen: tracker.samples_seen,
            loss,
            grad_norm_avg: avg_norm,
            step: StepRecord {
                rho: f64::NAN,
                delta_hat: f64::NAN,
                delta_hat_eps: f64::NAN,
                t: lr,
                eta: f64::NAN,
                fallback: false,
                batch_size: batch.len(),
            },
            p_current: f64::NAN,
            angle_stat: report.map_or(f64::NAN, |r| r.angle_statistic),
            hessian_stat: f64::NAN,
        });

        axpy(-lr, &g_k, &mut state.x);
        if !state.x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{} diverged at iteration {k} with lr {lr}",
                config.variant
            )));
        }
        if tracker.over_budget(config) {
            status = RunStatus::SampleBudget;
            break;
        }
    }
    tracker.finish(config.variant, state, data, status)
}

/// Fixed batch; adaptive steps for `probe_iters` iterations after each
/// milestone, then the median probed step until the next milestone.
pub fn run_milestone_mode(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    if config.mode != Mode::Milestone {
        return Err(Error::Config("run_milestone_mode needs mode = milestone".into()));
    }
    let mut state = initial_state(config, data, initial_x)?;
    let mut rng = batch_rng(config.seed);
    let mut controller = BatchController::new(&config.controller_params(), data.n_samples(), &mut rng)?;
    let mut buffer = FallbackBuffer::new(config.k_fallback)?;
    let mut rule = DirectionRule::for_config(config, data.n_features());
    let rho_mode = config.effective_rho_mode();
    let mut tracker = Tracker::new();
    let mut scratch = Vec::new();

    let mut frozen_lr = config.fixed_lr;
    let mut probe_left = 0usize;
    let mut probed: Vec<f64> = Vec::new();

    for k in 0..config.max_iters {
        if config.milestones.contains(&k) {
            probe_left = config.probe_iters;
            probed.clear();
        }
        controller.resample(&mut rng);
        let batch = controller.indices().to_vec();
        let subset = Subset::Indices(&batch);
        let g_k = model::grad(&state, data, subset)?;
        controller.update_running_average(&g_k);
        let avg_norm = norm(controller.g_avg().expect("set above"));
        tracker.gamma = tracker.gamma.max(avg_norm);
        let d = rule.next(&g_k, config);

        let record = if probe_left > 0 {
            let g_ref = reference_gradient(rho_mode, &g_k, &controller, &state, data, &mut scratch)?;
            let (rho, delta_hat) = direction_measures(&d, g_ref, &state, data, subset)?;
            let step = stepsize::adaptive_step(rho, delta_hat, config.eps, &mut buffer, config.bootstrap_step)?;
            probed.push(step.t);
            probe_left -= 1;
            if probe_left == 0 {
                frozen_lr = median(&probed);
            }
            step_record(rho, delta_hat, step, batch.len())
        } else {
            let lr = frozen_lr.expect("validated: milestone at 0 or fixed_lr");
            StepRecord {
                rho: f64::NAN,
                delta_hat: f64::NAN,
                delta_hat_eps: f64::NAN,
                t: lr,
                eta: f64::NAN,
                fallback: false,
                batch_size: batch.len(),
            }
        };

        tracker.samples_seen += batch.len() as u64;
        let loss = tracker.eval_loss(config, k, &state, data)?;
        tracker.records.push(IterationRecord {
            iter: k,
            samples_seen: tracker.samples_seen,
            loss,
            grad_norm_avg: avg_norm,
            step: record,
            p_current: f64::NAN,
            angle_stat: f64::NAN,
            hessian_stat: f64::NAN,
        });
        axpy(record.t, &d, &mut state.x);
        if tracker.over_budget(config) {
            return tracker.finish(config.variant, state, data, RunStatus::SampleBudget);
        }
    }
    tracker.finish(config.variant, state, data, RunStatus::MaxIters)
}

/// Runs whatever `config` describes.
pub fn run(config: &OptimizerConfig, data: &SparseDataset, initial_x: Option<&[f64]>) -> Result<RunLog> {
    match (config.mode, config.variant.is_adaptive()) {
        (Mode::Milestone, _) => run_milestone_mode(config, data, initial_x),
        (Mode::PerIteration, true) => run_per_iteration(config, data, initial_x),
        (Mode::PerIteration, false) => run_baseline(config, data, initial_x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_logistic, SparseRow};

    fn fixture() -> SparseDataset {
        synthetic_logistic(300, 5, 2.0, 3).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("ada_adam".parse::<Variant>().unwrap(), Variant::AdaAdam);
        assert!("sgd".parse::<Variant>().is_err());
        assert_eq!("exact".parse::<RhoMode>().unwrap(), RhoMode::Exact);
        assert_eq!("milestone".parse::<Mode>().unwrap(), Mode::Milestone);
    }

    #[test]
    fn config_validation() {
        let data = fixture();
        assert!(OptimizerConfig::default().validate(&data).is_ok());
        let bad = [
            OptimizerConfig::with_variant(Variant::SgdFixed),
            OptimizerConfig { fixed_lr: Some(0.1), ..Default::default() },
            OptimizerConfig { p0: 1.5, ..Default::default() },
            OptimizerConfig { beta1: 1.0, ..Default::default() },
            OptimizerConfig { init_batch: 1, ..Default::default() },
            OptimizerConfig { init_batch: 301, ..Default::default() },
            OptimizerConfig { mode: Mode::Milestone, ..Default::default() },
            OptimizerConfig { milestones: vec![0], ..Default::default() },
            OptimizerConfig { lambda: Some(-1.0), ..Default::default() },
        ];
        for cfg in bad {
            let err = run(&cfg, &data, None);
            assert!(err.is_err(), "{cfg:?}");
        }
        let wrong_dim = run(&OptimizerConfig::default(), &data, Some(&[0.0; 3]));
        assert!(matches!(wrong_dim, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn adam_degenerate_betas_normalize_elementwise() {
        let mut s = AdamState::new(3);
        let g = [0.5, -2.0, 1e-3];
        let d = s.direction(&g, 0.0, 0.0, 1e-8);
        for (di, gi) in d.iter().zip(&g) {
            assert!((di - (-gi / (gi.abs() + 1e-8))).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_bias_correction_first_step() {
        // after one step m_hat = g and v_hat = g^2 for any betas
        let mut s = AdamState::new(2);
        let g = [3.0, -4.0];
        let d = s.direction(&g, 0.9, 0.999, 0.0);
        assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.k, 1);
    }

    #[test]
    fn momentum_accumulates_without_damping() {
        let mut s = MomentumState::new(1);
        assert_eq!(s.direction(&[1.0], 0.5), vec![-1.0]);
        assert_eq!(s.direction(&[1.0], 0.5), vec![-1.5]);
        assert_eq!(s.direction(&[0.0], 0.5), vec![-0.75]);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let data = fixture();
        let cfg = OptimizerConfig {
            fixed_lr: Some(0.0),
            max_iters: 20,
            ..OptimizerConfig::with_variant(Variant::SgdFixed)
        };
        let x0 = vec![0.3, -0.1, 0.2, 0.0, 0.5];
        let log = run(&cfg, &data, Some(&x0)).unwrap();
        assert_eq!(log.final_state.x, x0);
        assert_eq!(log.iterations(), 20);
        assert!(log.records.iter().all(|r| r.batch_size() == 16));
    }

    #[test]
    fn norm_test_never_grows_on_identical_samples() {
        let rows = vec![SparseRow::from_dense(&[1.0, -1.0]); 50];
        let data = SparseDataset::new(rows, vec![1.0; 50], 2).unwrap();
        let cfg = OptimizerConfig {
            fixed_lr: Some(0.1),
            max_iters: 30,
            ..OptimizerConfig::with_variant(Variant::SgdNorm)
        };
        let log = run(&cfg, &data, None).unwrap();
        assert!(log.records.iter().all(|r| r.batch_size() == 16));
    }

    #[test]
    fn ada_sgd_batches_never_shrink() {
        let data = fixture();
        let cfg = OptimizerConfig {
            max_iters: 100,
            ..Default::default()
        };
        let log = run(&cfg, &data, None).unwrap();
        assert!(log.records.windows(2).all(|w| w[0].batch_size() <= w[1].batch_size()));
        assert!(log.final_loss < std::f64::consts::LN_2);
    }

    #[test]
    fn converged_start_stops_immediately() {
        let rows = vec![SparseRow::default(); 10];
        let data = SparseDataset::new(rows, vec![1.0; 10], 2).unwrap();
        for full_batch in [true, false] {
            let cfg = OptimizerConfig {
                full_batch,
                init_batch: 4,
                ..Default::default()
            };
            let log = run(&cfg, &data, None).unwrap();
            assert_eq!(log.status, RunStatus::Converged);
            assert_eq!(log.iterations(), 0);
        }
    }

    #[test]
    fn sample_budget_stops_run() {
        let data = fixture();
        let cfg = OptimizerConfig {
            fixed_lr: Some(0.1),
            max_samples: Some(100),
            ..OptimizerConfig::with_variant(Variant::SgdFixed)
        };
        let log = run(&cfg, &data, None).unwrap();
        assert_eq!(log.status, RunStatus::SampleBudget);
        assert_eq!(log.samples_seen(), 112);
    }

    #[test]
    fn milestone_freezes_median_of_probe() {
        let data = fixture();
        let cfg = OptimizerConfig {
            mode: Mode::Milestone,
            milestones: vec![0],
            probe_iters: 3,
            max_iters: 10,
            ..Default::default()
        };
        let log = run(&cfg, &data, None).unwrap();
        let probed: Vec<f64> = log.records[..3].iter().map(|r| r.step.t).collect();
        let want = median(&probed).unwrap();
        for r in &log.records[3..] {
            assert_eq!(r.step.t, want);
            assert!(r.step.rho.is_nan());
        }
        assert!(log.records.iter().all(|r| r.batch_size() == 16));
    }

    #[test]
    fn milestone_without_milestones_is_fixed_rate() {
        let data = fixture();
        let cfg = OptimizerConfig {
            mode: Mode::Milestone,
            fixed_lr: Some(0.25),
            max_iters: 10,
            ..Default::default()
        };
        let log = run(&cfg, &data, None).unwrap();
        assert!(log.records.iter().all(|r| r.step.t == 0.25));
    }
}
