//! Python bindings: environments, training runs, theory verification and the
//! exact Wasserstein solver.

use std::path::Path;

use memb::envs::{make_system, Env};
use memb::harness::{model_error_csv, model_errors, train as train_run, verify_theory as verify, RunConfig, VerifyOptions};
use memb::theory::{w1_on_points, wasserstein_discrete};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A toy control environment (`pendulum`, `point_mass`, `mass_spring_damper`).
#[pyclass(name = "Env")]
struct PyEnv {
    env: Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            env: Env::new(make_system(name).map_err(value_err)?),
        })
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.env.spec().obs_dim
    }

    #[getter]
    fn act_dim(&self) -> usize {
        self.env.spec().act_dim
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.env.spec().horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.env.reset(seed)
    }

    /// Returns `(observation, reward, done)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let out = self.env.step(&action).map_err(value_err)?;
        Ok((out.observation, out.reward, out.done))
    }
}

/// Default configuration for `env`, as TOML text.
#[pyfunction]
#[pyo3(signature = (env = "pendulum"))]
fn default_config(env: &str) -> PyResult<String> {
    RunConfig::defaults_for(env).and_then(|c| c.to_toml()).map_err(value_err)
}

/// Trains into `out_dir` with `key -> value` overrides (values in TOML syntax);
/// returns the run directory.
#[pyfunction]
#[pyo3(signature = (out_dir, overrides = None, config = None))]
fn train(
    py: Python<'_>,
    out_dir: &str,
    overrides: Option<Vec<(String, String)>>,
    config: Option<&str>,
) -> PyResult<String> {
    let cfg = RunConfig::resolve(config, &overrides.unwrap_or_default()).map_err(value_err)?;
    let dir = Path::new(out_dir).to_path_buf();
    let rec = py.detach(|| train_run(&cfg, &dir)).map_err(runtime_err)?;
    Ok(rec.dir.display().to_string())
}

/// Checks the return bounds on `count` random instances; returns the summary
/// as a JSON string.
#[pyfunction]
#[pyo3(signature = (count = 200, seed = 0, ks = vec![1, 2, 3, 5], states = 16, actions = 3, lemmas = true))]
fn verify_theory(
    py: Python<'_>,
    count: usize,
    seed: u64,
    ks: Vec<usize>,
    states: usize,
    actions: usize,
    lemmas: bool,
) -> PyResult<String> {
    let opts = VerifyOptions {
        count,
        seed,
        ks,
        states,
        actions,
        lemmas,
    };
    let summary = py.detach(|| verify(&opts, &mut std::io::sink())).map_err(runtime_err)?;
    serde_json::to_string(&summary).map_err(runtime_err)
}

/// Per-checkpoint model error CSV of a run directory (or seed subdirectories).
#[pyfunction]
fn model_error(run_dir: &str) -> PyResult<String> {
    let rows = model_errors(Path::new(run_dir)).map_err(runtime_err)?;
    Ok(model_error_csv(&rows))
}

/// Exact W1 between two distributions on shared Euclidean support points.
#[pyfunction]
fn wasserstein(mu1: Vec<f64>, mu2: Vec<f64>, points: Vec<Vec<f64>>) -> PyResult<f64> {
    w1_on_points(&mu1, &mu2, &points).map_err(value_err)
}

/// Exact optimal-transport cost for an arbitrary cost matrix.
#[pyfunction]
fn transport_cost(mu1: Vec<f64>, mu2: Vec<f64>, cost: Vec<Vec<f64>>) -> PyResult<f64> {
    wasserstein_discrete(&mu1, &mu2, &cost).map_err(value_err)
}

#[pymodule]
fn pymemb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theory, m)?)?;
    m.add_function(wrap_pyfunction!(model_error, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(transport_cost, m)?)?;
    Ok(())
}
