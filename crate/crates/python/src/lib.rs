//! Python bindings: datasets, the objective and its derivatives, the
//! step-size rule, optimizer runs and the verification suites.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use adasgd::harness::{self, CheckOptions};
use adasgd::optimizers::{Mode, RunLog};
use adasgd::{model, stepsize, Error, ModelState, OptimizerConfig, SparseDataset, Subset};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset {
    inner: SparseDataset,
}

impl PyDataset {
    fn state(&self, x: Vec<f64>, lam: Option<f64>) -> PyResult<ModelState> {
        let lambda = lam.unwrap_or(1.0 / self.inner.n_samples() as f64);
        ModelState::new(x, lambda).map_err(to_py)
    }
}

#[pymethods]
impl PyDataset {
    /// Reads a LIBSVM file.
    #[staticmethod]
    #[pyo3(signature = (path, n_features=None))]
    fn from_libsvm(path: &str, n_features: Option<usize>) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let inner = adasgd::parse_libsvm(BufReader::new(file), n_features).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n, d, separation=1.0, seed=0))]
    fn synthetic(n: usize, d: usize, separation: f64, seed: u64) -> PyResult<Self> {
        let inner = adasgd::synthetic_logistic(n, d, separation, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn labels(&self) -> Vec<f64> {
        self.inner.labels().to_vec()
    }

    /// Full-dataset objective; `lam` defaults to 1/N.
    #[pyo3(signature = (x, lam=None))]
    fn loss(&self, x: Vec<f64>, lam: Option<f64>) -> PyResult<f64> {
        model::loss(&self.state(x, lam)?, &self.inner, Subset::All).map_err(to_py)
    }

    #[pyo3(signature = (x, lam=None))]
    fn grad(&self, x: Vec<f64>, lam: Option<f64>) -> PyResult<Vec<f64>> {
        model::grad(&self.state(x, lam)?, &self.inner, Subset::All).map_err(to_py)
    }

    #[pyo3(signature = (x, v, lam=None))]
    fn hvp(&self, x: Vec<f64>, v: Vec<f64>, lam: Option<f64>) -> PyResult<Vec<f64>> {
        model::hvp(&self.state(x, lam)?, &self.inner, Subset::All, &v).map_err(to_py)
    }

    fn accuracy(&self, x: Vec<f64>) -> f64 {
        self.inner.accuracy(&x)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_samples={}, n_features={})",
            self.inner.n_samples(),
            self.inner.n_features()
        )
    }
}

#[pyclass(name = "RunResult", frozen)]
pub struct PyRunResult {
    log: RunLog,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn final_loss(&self) -> f64 {
        self.log.final_loss
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.log.final_state.x.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.log.iterations()
    }

    #[getter]
    fn samples_seen(&self) -> u64 {
        self.log.samples_seen()
    }

    #[getter]
    fn status(&self) -> String {
        self.log.status.to_string()
    }

    fn batch_sizes(&self) -> Vec<usize> {
        self.log.records.iter().map(|r| r.batch_size()).collect()
    }

    fn step_sizes(&self) -> Vec<f64> {
        self.log.records.iter().map(|r| r.step.t).collect()
    }

    /// Per-iteration metrics in the CLI's CSV format.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        harness::write_csv(&self.log, &mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(variant={}, final_loss={:.6e}, iterations={}, status={})",
            self.log.variant,
            self.log.final_loss,
            self.log.iterations(),
            self.log.status
        )
    }
}

/// Runs one optimizer. Unlisted settings keep their library defaults.
#[pyfunction]
#[pyo3(signature = (
    data, optimizer="ada-sgd", *, seed=0, max_iters=1000, init_batch=16, p=0.1, nu=0.1, eps=0.01,
    lam=None, fixed_lr=None, beta1=0.9, beta2=0.999, full_batch=false, max_samples=None,
    milestones=None, probe_iters=20, initial_x=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: &PyDataset,
    optimizer: &str,
    seed: u64,
    max_iters: usize,
    init_batch: usize,
    p: f64,
    nu: f64,
    eps: f64,
    lam: Option<f64>,
    fixed_lr: Option<f64>,
    beta1: f64,
    beta2: f64,
    full_batch: bool,
    max_samples: Option<u64>,
    milestones: Option<Vec<usize>>,
    probe_iters: usize,
    initial_x: Option<Vec<f64>>,
) -> PyResult<PyRunResult> {
    let cfg = OptimizerConfig {
        variant: optimizer.parse().map_err(to_py)?,
        seed,
        max_iters,
        init_batch,
        p0: p,
        nu,
        eps,
        lambda: lam,
        fixed_lr,
        beta1,
        beta2,
        full_batch,
        max_samples,
        mode: if milestones.is_some() { Mode::Milestone } else { Mode::PerIteration },
        milestones: milestones.unwrap_or_default(),
        probe_iters,
        ..Default::default()
    };
    let log = adasgd::run(&cfg, &data.inner, initial_x.as_deref()).map_err(to_py)?;
    Ok(PyRunResult { log })
}

/// Adaptive step size for alignment `rho` and local norm `delta_hat`;
/// returns `(t, used_fallback)`.
#[pyfunction]
#[pyo3(signature = (rho, delta_hat, eps=0.01))]
fn adaptive_step(rho: f64, delta_hat: f64, eps: f64) -> PyResult<(f64, bool)> {
    let mut buffer = stepsize::FallbackBuffer::new(20).map_err(to_py)?;
    let step = stepsize::adaptive_step(rho, delta_hat, eps, &mut buffer, stepsize::DEFAULT_BOOTSTRAP_STEP)
        .map_err(to_py)?;
    Ok((step.t, step.fallback))
}

/// Finite-difference check of the gradient and HVP.
#[pyfunction]
#[pyo3(signature = (data, lam=None, states=20, seed=0))]
fn check<'py>(
    py: Python<'py>,
    data: &PyDataset,
    lam: Option<f64>,
    states: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let lambda = lam.unwrap_or(1.0 / data.inner.n_samples() as f64);
    let opts = CheckOptions {
        n_states: states,
        seed,
        ..Default::default()
    };
    let r = harness::finite_difference_check(&data.inner, lambda, &opts).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("max_grad_rel_err", r.max_grad_rel_err)?;
    d.set_item("max_hvp_rel_err", r.max_hvp_rel_err)?;
    d.set_item("passed", r.passed)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (trials=10_000, p=0.1, nu=0.1, seed=0))]
fn markov_suite(py: Python<'_>, trials: usize, p: f64, nu: f64, seed: u64) -> PyResult<Bound<'_, PyDict>> {
    let r = harness::montecarlo_markov_suite(trials, p, nu, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("batch_size", r.batch_size)?;
    d.set_item("accepted", r.accepted)?;
    d.set_item("violations", r.violations)?;
    d.set_item("frequency", r.frequency)?;
    d.set_item("bound", r.bound)?;
    d.set_item("passed", r.passed)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "adasgd")]
fn adasgd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_step, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(markov_suite, m)?)?;
    Ok(())
}
