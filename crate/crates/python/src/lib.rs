//! Python bindings: configs, problems, the PINN solver, the oracles, rollouts
//! and the inequality checks.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use soft_hjb::approx::{Checkpoint, MlpValueNet, PolicyNet, ValueFunction};
use soft_hjb::config::RunConfig;
use soft_hjb::diagnostics::{run_check, LemmaId};
use soft_hjb::oracle::{exact_policy_iteration, solve_riccati, SpatialGrid};
use soft_hjb::problem::ControlProblem;
use soft_hjb::rollout::{evaluate_policy, SdeConfig};
use soft_hjb::spi::{pinn_spi_run, IterationExtras};
use soft_hjb::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } | Error::InvalidProblem(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Run configuration (JSON-backed).
#[pyclass(name = "RunConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn desk_1d() -> Self {
        Self { inner: RunConfig::desk_1d() }
    }

    #[staticmethod]
    fn desk_2d() -> Self {
        Self { inner: RunConfig::desk_2d() }
    }

    #[staticmethod]
    fn desk_lqr5() -> Self {
        Self { inner: RunConfig::desk_lqr5() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn max_iters(&self) -> usize {
        self.inner.spi.max_iters
    }

    #[setter]
    fn set_max_iters(&mut self, n: usize) {
        self.inner.spi.max_iters = n;
    }

    /// Sets the value and policy epoch budgets.
    fn set_epochs(&mut self, value: usize, policy: usize) {
        self.inner.opt.epochs_value = value;
        self.inner.opt.epochs_policy = policy;
    }

    fn problem(&self) -> PyResult<PyProblem> {
        Ok(PyProblem { inner: self.inner.build_problem().map_err(to_py)? })
    }
}

/// Controlled diffusion with entropy-regularized reward.
#[pyclass(name = "Problem")]
struct PyProblem {
    inner: ControlProblem,
}

#[pymethods]
impl PyProblem {
    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.lambda()
    }

    fn drift(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x, &u)?;
        let mut out = vec![0.0; self.inner.state_dim()];
        self.inner.drift(&x, &u, &mut out);
        Ok(out)
    }

    fn reward(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        self.check(&x, &u)?;
        Ok(self.inner.reward(&x, &u))
    }
}

impl PyProblem {
    fn check(&self, x: &[f64], u: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.state_dim() || u.len() != self.inner.control_dim() {
            return Err(PyValueError::new_err(format!(
                "expected state of length {} and control of length {}",
                self.inner.state_dim(),
                self.inner.control_dim()
            )));
        }
        Ok(())
    }
}

/// Learned value and policy of one solver iteration.
#[pyclass(name = "Solution")]
struct PySolution {
    value: MlpValueNet,
    policy: Option<PolicyNet>,
    iteration: usize,
    config: RunConfig,
    #[pyo3(get)]
    ledger_csv: String,
}

#[pymethods]
impl PySolution {
    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let config = ckpt
            .config
            .clone()
            .ok_or_else(|| PyValueError::new_err("checkpoint carries no config"))
            .and_then(|v| serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string())))?;
        Ok(Self { value: ckpt.value, policy: ckpt.policy, iteration: ckpt.iteration, config, ledger_csv: String::new() })
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.iteration
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.value.value(&x).map_err(to_py)
    }

    /// Values at many states (`xs` is a list of states).
    fn values(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let flat: Vec<f64> = xs.into_iter().flatten().collect();
        self.value.values(&flat).map_err(to_py)
    }

    fn to_checkpoint(&self) -> PyResult<String> {
        let controls = self.controls()?;
        let ckpt = Checkpoint::new(self.config.seed, self.iteration, controls, self.value.clone(), self.policy.clone())
            .with_config(self.config.to_json());
        serde_json::to_string(&ckpt).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Monte Carlo discounted reward of the learned policy.
    #[pyo3(signature = (paths=256, seed=0))]
    fn evaluate<'py>(&self, py: Python<'py>, paths: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let problem = self.config.build_problem().map_err(to_py)?;
        let controls = self.config.control_grid(&problem).map_err(to_py)?;
        let policy = self.policy.as_ref().ok_or_else(|| PyValueError::new_err("solution holds no policy"))?;
        let mut sde = self.config.sde_config(&problem).unwrap_or_else(|| SdeConfig::for_problem(&problem, seed));
        sde.paths = paths;
        sde.seed = seed;
        let report = py.detach(|| evaluate_policy(&problem, &controls, policy, &sde)).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("mean", report.mean)?;
        out.set_item("stderr", report.stderr)?;
        out.set_item("rewards", report.rewards)?;
        out.set_item("truncated_paths", report.truncated_paths)?;
        Ok(out)
    }
}

impl PySolution {
    fn controls(&self) -> PyResult<String> {
        let problem = self.config.build_problem().map_err(to_py)?;
        Ok(self.config.control_grid(&problem).map_err(to_py)?.fingerprint())
    }
}

/// Runs PINN soft policy iteration for `config`.
#[pyfunction]
fn solve(py: Python<'_>, config: &PyRunConfig) -> PyResult<PySolution> {
    let cfg = config.inner.clone();
    let outcome = py
        .detach(|| {
            let problem = cfg.build_problem()?;
            let controls = cfg.control_grid(&problem)?;
            pinn_spi_run(&problem, &controls, &cfg.spi_config(), &mut |_| Ok(IterationExtras::default()))
        })
        .map_err(to_py)?;
    Ok(PySolution {
        value: outcome.value,
        policy: Some(outcome.policy),
        iteration: outcome.ledger.len(),
        config: cfg,
        ledger_csv: outcome.ledger.to_csv(),
    })
}

/// Exact soft policy iteration on a finite-difference grid (1D/2D problems).
#[pyfunction]
#[pyo3(signature = (config, grid_n=None, max_iters=50, tol=1e-8))]
fn exact_pi<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    grid_n: Option<usize>,
    max_iters: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let problem = cfg.build_problem().map_err(to_py)?;
    let controls = cfg.control_grid(&problem).map_err(to_py)?;
    let n = grid_n.or(cfg.oracle.as_ref().map(|o| o.grid_n)).unwrap_or(256);
    let grid = SpatialGrid::for_problem(&problem, n).map_err(to_py)?;
    let run = py
        .detach(|| exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], max_iters, tol))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.node(i)).collect();
    out.set_item("nodes", nodes)?;
    out.set_item("values", run.last().values.clone())?;
    out.set_item("increments", run.increments.clone())?;
    out.set_item("converged", run.converged)?;
    Ok(out)
}

/// Discounted Riccati baseline of an LQR config.
#[pyfunction]
fn riccati<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyDict>> {
    let spec = config.inner.lqr_spec().map_err(to_py)?;
    let sol = solve_riccati(&spec, config.inner.rho).map_err(to_py)?;
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    let out = PyDict::new(py);
    out.set_item("p", rows(&sol.p))?;
    out.set_item("k", rows(&sol.k))?;
    out.set_item("c", sol.c)?;
    Ok(out)
}

/// Runs one inequality check (`1`, `2`, `3`, `prop1`, `pinsker`); returns
/// one summary JSON string per report.
#[pyfunction]
#[pyo3(signature = (lemma, trials=None, seed=0))]
fn verify(py: Python<'_>, lemma: &str, trials: Option<usize>, seed: u64) -> PyResult<Vec<String>> {
    let id: LemmaId = lemma.parse().map_err(to_py)?;
    let reports = py.detach(|| run_check(id, trials.unwrap_or(id.default_trials()), seed)).map_err(to_py)?;
    Ok(reports.iter().map(|r| r.summary().to_string()).collect())
}

#[pymodule]
fn soft_hjb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(exact_pi, m)?)?;
    m.add_function(wrap_pyfunction!(riccati, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
