//! Paired runs of several optimizers on one dataset.

use std::fmt;
use std::str::FromStr;

use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::optimizers::{run, OptimizerConfig, RunLog, RunStatus, Variant};

/// Learning rate of a fixed-rate entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSpec {
    /// Inherit from the base configuration.
    Inherit,
    Value(f64),
    /// Median step size of the most recent adaptive run in the list.
    AdaMedian,
}

/// `VARIANT[:LR]`, e.g. `ada-sgd`, `sgd-fixed:0.1`, `sgd-fixed:ada-median`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub variant: Variant,
    pub lr: LrSpec,
}

impl FromStr for RunSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, lr) = match s.split_once(':') {
            Some((name, lr)) => (name, Some(lr.trim())),
            None => (s, None),
        };
        let variant: Variant = name.parse()?;
        let lr = match lr {
            None => LrSpec::Inherit,
            Some("ada-median") => LrSpec::AdaMedian,
            Some(v) => LrSpec::Value(
                v.parse()
                    .map_err(|_| Error::Config(format!("bad learning rate {v:?} in {s:?}")))?,
            ),
        };
        if variant.is_adaptive() && lr != LrSpec::Inherit {
            return Err(Error::Config(format!("{variant} takes no learning rate")));
        }
        Ok(Self { variant, lr })
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lr {
            LrSpec::Inherit => write!(f, "{}", self.variant),
            LrSpec::Value(v) => write!(f, "{}:{v}", self.variant),
            LrSpec::AdaMedian => write!(f, "{}:ada-median", self.variant),
        }
    }
}

pub fn parse_run_specs(items: &[String]) -> Result<Vec<RunSpec>> {
    let specs = items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<RunSpec>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("compare needs at least one variant".into()));
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub final_loss: f64,
    pub samples_seen: u64,
    pub iterations: usize,
    pub median_step: f64,
    pub status: RunStatus,
}

pub const SUMMARY_HEADER: &str = "run,final_loss,samples_seen,iterations,median_step,status";

impl SummaryRow {
    pub fn from_log(label: String, log: &RunLog) -> Self {
        Self {
            label,
            final_loss: log.final_loss,
            samples_seen: log.samples_seen(),
            iterations: log.iterations(),
            median_step: log.median_step().unwrap_or(f64::NAN),
            status: log.status,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.label,
            super::metrics::format_float(self.final_loss),
            self.samples_seen,
            self.iterations,
            super::metrics::format_float(self.median_step),
            self.status
        )
    }
}

/// Runs each spec with `base` (same seed, so batch draws are paired) and
/// returns the logs in order.
pub fn run_compare(base: &OptimizerConfig, data: &SparseDataset, specs: &[RunSpec]) -> Result<Vec<(RunSpec, RunLog)>> {
    if specs.is_empty() {
        return Err(Error::Config("compare needs at least one variant".into()));
    }
    let mut out: Vec<(RunSpec, RunLog)> = Vec::with_capacity(specs.len());
    for spec in specs {
        let fixed_lr = match spec.lr {
            _ if spec.variant.is_adaptive() => None,
            LrSpec::Inherit => base.fixed_lr,
            LrSpec::Value(v) => Some(v),
            LrSpec::AdaMedian => {
                let (_, log) = out
                    .iter()
                    .rev()
                    .find(|(s, _)| s.variant.is_adaptive())
                    .ok_or_else(|| Error::Config(format!("{spec} needs an adaptive run earlier in the list")))?;
                Some(log.median_step().ok_or_else(|| {
                    Error::Config(format!("{spec}: the adaptive run recorded no steps"))
                })?)
            }
        };
        let cfg = OptimizerConfig {
            variant: spec.variant,
            fixed_lr,
            ..base.clone()
        };
        let log = run(&cfg, data, None)?;
        out.push((*spec, log));
    }
    Ok(out)
}
