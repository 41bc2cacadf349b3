//! `adasgd` command line.
//!
//! Exit codes: 0 success, 1 data or runtime failure (including a failed
//! check), 2 usage or configuration error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::bounds::{bounds_report, BoundsInput};
use super::check::{finite_difference_check, CheckOptions};
use super::compare::{parse_run_specs, run_compare, SummaryRow, SUMMARY_HEADER};
use super::config::{load_dataset, LambdaArg, TrainArgs};
use super::metrics::write_csv;
use super::montecarlo::montecarlo_markov_suite;
use crate::error::{Error, Result};
use crate::optimizers::run;

#[derive(Debug, Parser)]
#[command(name = "adasgd", version, about = "Adaptive step-size SGD for regularized logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one optimizer and write per-iteration metrics.
    Train(TrainArgs),
    /// Compare analytic gradient and HVP with finite differences.
    Check(CheckArgs),
    /// Print idealized batch-size bounds and rate constants.
    Bounds(BoundsArgs),
    /// Run several optimizers with paired seeds.
    Compare(CompareArgs),
    /// Monte-Carlo check of the acute-angle test's probability bound.
    Markov(MarkovArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaArg,
    #[arg(long, default_value_t = 20)]
    pub states: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Perturb the analytic gradient to exercise the failure path.
    #[arg(long)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Condition number; sets m = 1 and M = kappa when given.
    #[arg(long, conflicts_with_all = ["m_lower", "m_upper"])]
    pub kappa: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub m_lower: f64,
    #[arg(long, default_value_t = 1.0)]
    pub m_upper: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Problem dimension.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    /// Failure probability of the gradient concentration bound.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub g_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    pub g_norm: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated `VARIANT[:LR]` entries, e.g. `ada-sgd,sgd-fixed:ada-median`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub variants: Vec<String>,
    /// Directory for per-run CSVs and summary.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct MarkovArgs {
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub nu: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => train(args, out),
        Command::Check(args) => check(args, out),
        Command::Bounds(args) => bounds(args, out),
        Command::Compare(args) => compare(args, out),
        Command::Markov(args) => markov(args, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let args = args.resolve()?;
    let data = args.load_dataset()?;
    let cfg = args.optimizer_config(&data)?;
    writeln!(
        out,
        "# optimizer={} n={} d={} lambda={} seed={}",
        cfg.variant,
        data.n_samples(),
        data.n_features(),
        cfg.lambda.expect("resolved"),
        cfg.seed
    )?;
    let log = run(&cfg, &data, None)?;
    if let Some(path) = &args.out {
        write_csv(&log, BufWriter::new(File::create(path)?))?;
    }
    writeln!(
        out,
        "final_loss={:.16e} iterations={} samples_seen={} status={}",
        log.final_loss,
        log.iterations(),
        log.samples_seen(),
        log.status
    )?;
    Ok(0)
}

fn check(args: CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let data = load_dataset(args.data.as_deref(), args.synthetic.as_deref())?;
    let lambda = args.lambda.resolve(data.n_samples());
    let opts = CheckOptions {
        n_states: args.states,
        seed: args.seed,
        tolerance: args.tolerance,
        corrupt_gradient: args.corrupt_gradient,
    };
    let r = finite_difference_check(&data, lambda, &opts)?;
    writeln!(out, "states={} lambda={lambda}", r.n_states)?;
    writeln!(out, "max_grad_rel_err={:.3e}", r.max_grad_rel_err)?;
    writeln!(out, "max_hvp_rel_err={:.3e}", r.max_hvp_rel_err)?;
    writeln!(out, "{} (tolerance {:.0e})", if r.passed { "PASS" } else { "FAIL" }, r.tolerance)?;
    Ok(if r.passed { 0 } else { 1 })
}

fn bounds(args: BoundsArgs, out: &mut dyn Write) -> Result<i32> {
    let (m_lower, m_upper) = match args.kappa {
        Some(k) => (1.0, k),
        None => (args.m_lower, args.m_upper),
    };
    let input = BoundsInput {
        m_lower,
        m_upper,
        gamma: args.gamma,
        n: args.n,
        p: args.p,
        eps: args.eps,
        nu: args.nu,
        delta: args.delta,
        g_bound: args.g_bound,
        g_norm: args.g_norm,
    };
    let r = bounds_report(&input).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out, "kappa={}", r.kappa)?;
    match r.samples {
        Ok(s) => {
            writeln!(out, "hess_bound={}", s.hess_bound)?;
            writeln!(out, "grad_bound={}", s.grad_bound)?;
        }
        Err(why) => writeln!(out, "sample_bounds={why}")?,
    }
    writeln!(out, "alpha={}", r.rates.alpha)?;
    writeln!(out, "rho_rate={}", r.rates.rho_rate)?;
    writeln!(out, "rho_rate_concentration={}", r.rates.rho_rate_concentration)?;
    Ok(0)
}

fn compare(args: CompareArgs, out: &mut dyn Write) -> Result<i32> {
    let specs = parse_run_specs(&args.variants)?;
    let train = args.train.resolve()?;
    if train.optimizer.is_some() || train.out.is_some() {
        return Err(Error::Config("compare takes --variants and --out-dir instead of --optimizer and --out".into()));
    }
    let data = train.load_dataset()?;
    let base = train.build_config(&data)?;
    let runs = run_compare(&base, &data, &specs)?;

    fs::create_dir_all(&args.out_dir)?;
    let mut summary = BufWriter::new(File::create(args.out_dir.join("summary.csv"))?);
    writeln!(summary, "{SUMMARY_HEADER}")?;
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (i, (spec, log)) in runs.iter().enumerate() {
        let label = spec.to_string();
        let file = format!("{i:02}_{}.csv", label.replace(':', "_"));
        write_csv(log, BufWriter::new(File::create(args.out_dir.join(file))?))?;
        let line = SummaryRow::from_log(label, log).to_csv_line();
        writeln!(summary, "{line}")?;
        writeln!(out, "{line}")?;
    }
    summary.flush()?;
    Ok(0)
}

fn markov(args: MarkovArgs, out: &mut dyn Write) -> Result<i32> {
    let r = montecarlo_markov_suite(args.trials, args.p, args.nu, args.seed)
        .map_err(|e| Error::Config(e.to_string()))?;
    writeln!(
        out,
        "trials={} batch_size={} accepted={} violations={} frequency={:.6} bound={:.6}",
        r.trials, r.batch_size, r.accepted, r.violations, r.frequency, r.bound
    )?;
    writeln!(out, "{}", if r.passed { "PASS" } else { "FAIL" })?;
    Ok(if r.passed { 0 } else { 1 })
}
