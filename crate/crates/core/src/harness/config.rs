//! Training configuration: JSON file values overridden by CLI flags.
//!
//! JSON keys are the CLI flag names with dashes replaced by underscores.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Deserializer};

use crate::dataset::{parse_libsvm, synthetic_logistic, SparseDataset};
use crate::error::{Error, Result};
use crate::optimizers::{OptimizerConfig, RhoMode, Variant};
use crate::sampling::PSchedule;

/// `auto` (= 1/N) or a literal value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Auto,
    Value(f64),
}

impl LambdaArg {
    pub fn resolve(self, n_samples: usize) -> f64 {
        match self {
            LambdaArg::Auto => 1.0 / n_samples as f64,
            LambdaArg::Value(v) => v,
        }
    }
}

impl FromStr for LambdaArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaArg::Value(v)),
            _ => Err(Error::Config(format!("lambda must be `auto` or a finite value >= 0, got {s:?}"))),
        }
    }
}

impl fmt::Display for LambdaArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaArg::Auto => f.write_str("auto"),
            LambdaArg::Value(v) => write!(f, "{v}"),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaArg {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => LambdaArg::from_str(&v.to_string()),
            Raw::Text(s) => LambdaArg::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// `N,D,SEP[,SEED]` for [`synthetic_logistic`]; the data seed defaults to
/// 0 and is independent of the run seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub separation: f64,
    pub seed: u64,
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("--synthetic expects N,D,SEP[,SEED], got {s:?}"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        Ok(Self {
            n: parts[0].parse().map_err(|_| bad())?,
            d: parts[1].parse().map_err(|_| bad())?,
            separation: parts[2].parse().map_err(|_| bad())?,
            seed: parts.get(3).map_or(Ok(0), |v| v.parse()).map_err(|_| bad())?,
        })
    }
}

pub fn parse_p_schedule(s: &str) -> Result<PSchedule> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "geometric" => Ok(PSchedule::default()),
        "inverse-square" => Ok(PSchedule::InverseSquare),
        _ => Err(Error::Config(format!(
            "unknown p schedule {s:?}; expected geometric or inverse-square"
        ))),
    }
}

/// Reads a LIBSVM file or generates a synthetic set; exactly one source
/// must be given.
pub fn load_dataset(data: Option<&Path>, synthetic: Option<&str>) -> Result<SparseDataset> {
    match (data, synthetic) {
        (Some(path), None) => {
            let file = File::open(path)?;
            parse_libsvm(BufReader::new(file), None)
        }
        (None, Some(spec)) => {
            let s: SyntheticSpec = spec.parse()?;
            synthetic_logistic(s.n, s.d, s.separation, s.seed)
        }
        (Some(_), Some(_)) => Err(Error::Config("give either --data or --synthetic, not both".into())),
        (None, None) => Err(Error::Config("one of --data or --synthetic is required".into())),
    }
}

/// Flags of `adasgd train`. Every field is optional so file values can be
/// layered under flag values.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// LIBSVM training file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic logistic data `N,D,SEP[,SEED]`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// ada-sgd, ada-adam, ada-momentum, sgd-fixed, sgd-norm, sgd-inner or sgd-augmented.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub beta_avg: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps_prime: Option<f64>,
    #[arg(long)]
    pub init_batch: Option<usize>,
    #[arg(long)]
    pub max_batch: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regularization weight, or `auto` for 1/N.
    #[arg(long)]
    pub lambda: Option<LambdaArg>,
    #[arg(long)]
    pub fixed_lr: Option<f64>,
    /// Baseline test threshold; defaults to nu.
    #[arg(long)]
    pub theta: Option<f64>,
    /// per-iteration or milestone.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    #[arg(long)]
    pub probe_iters: Option<usize>,
    /// geometric or inverse-square.
    #[arg(long)]
    pub p_schedule: Option<String>,
    #[arg(long)]
    pub k_fallback: Option<usize>,
    /// running-average, sampled or exact.
    #[arg(long)]
    pub rho_mode: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full_batch: Option<bool>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for any of the flags above.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($field:ident),*) => {
        TrainArgs { $($field: $over.$field.or($base.$field),)* }
    };
}

impl TrainArgs {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: TrainArgs) -> TrainArgs {
        let base = self;
        overlay!(base, over; data, synthetic, optimizer, p, nu, eps, beta_avg, beta1, beta2,
            eps_prime, init_batch, max_batch, max_iters, max_samples, seed, lambda, fixed_lr,
            theta, mode, milestones, probe_iters, p_schedule, k_fallback, rho_mode, full_batch,
            eval_every, out, config)
    }

    /// Applies `--config` if present.
    pub fn resolve(self) -> Result<TrainArgs> {
        match &self.config {
            Some(path) => Ok(TrainArgs::from_json_file(path)?.overlay(self)),
            None => Ok(self),
        }
    }

    pub fn load_dataset(&self) -> Result<SparseDataset> {
        load_dataset(self.data.as_deref(), self.synthetic.as_deref())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.optimizer.as_deref().unwrap_or("ada-sgd").parse()
    }

    /// Validated configuration for `data`.
    pub fn optimizer_config(&self, data: &SparseDataset) -> Result<OptimizerConfig> {
        let cfg = self.build_config(data)?;
        cfg.validate(data)?;
        Ok(cfg)
    }

    /// Configuration without cross-field validation.
    pub fn build_config(&self, data: &SparseDataset) -> Result<OptimizerConfig> {
        let d = OptimizerConfig::default();
        Ok(OptimizerConfig {
            variant: self.variant()?,
            p0: self.p.unwrap_or(d.p0),
            nu: self.nu.unwrap_or(d.nu),
            eps: self.eps.unwrap_or(d.eps),
            init_batch: self.init_batch.unwrap_or(d.init_batch),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            fixed_lr: self.fixed_lr,
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps_prime: self.eps_prime.unwrap_or(d.eps_prime),
            beta_avg: self.beta_avg.unwrap_or(d.beta_avg),
            seed: self.seed.unwrap_or(d.seed),
            p_schedule: self.p_schedule.as_deref().map_or(Ok(d.p_schedule), parse_p_schedule)?,
            k_fallback: self.k_fallback.unwrap_or(d.k_fallback),
            mode: self.mode.as_deref().map_or(Ok(d.mode), str::parse)?,
            milestones: self.milestones.clone().unwrap_or_default(),
            probe_iters: self.probe_iters.unwrap_or(d.probe_iters),
            lambda: Some(self.lambda.unwrap_or(LambdaArg::Auto).resolve(data.n_samples())),
            theta: self.theta,
            rho_mode: self.rho_mode.as_deref().map(str::parse::<RhoMode>).transpose()?,
            full_batch: self.full_batch.unwrap_or(false),
            max_batch: self.max_batch,
            max_samples: self.max_samples,
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            tolerance: d.tolerance,
            bootstrap_step: d.bootstrap_step,
        })
    }
}
