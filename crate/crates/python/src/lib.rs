//! Python module `cflhkd`: run simulations and call the clustering primitives.

use cflhkd_core::fdc::{cluster_clients, AffinityMatrix};
use cflhkd_core::numerics::{jsd as jsd_core, Histogram};
use cflhkd_core::report::write_metrics_csv;
use cflhkd_core::sim::{self, Method, RunSummary, SimConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses JSON text into Python objects with the standard `json` module.
fn to_python<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

/// Default configuration as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    SimConfig::default().to_toml_string().map_err(value_err)
}

/// Names accepted by the `method` argument of [`run`].
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

/// Runs one simulation.
///
/// Returns a dict with `summary`, `metrics` (one dict per round, CSV columns as
/// keys and `None` for empty fields), `metrics_csv` and `events`. When
/// `out_dir` is given the usual output files are written there as well.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None, method=None, out_dir=None))]
fn run<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: Option<u64>,
    method: Option<&str>,
    out_dir: Option<std::path::PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(text) => SimConfig::from_toml_str(text).map_err(value_err)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = method {
        cfg.method = m.parse().map_err(value_err)?;
    }
    cfg.validate().map_err(value_err)?;
    let artifacts = py.detach(|| sim::run(&cfg)).map_err(value_err)?;
    if let Some(dir) = out_dir {
        sim::write_outputs(&artifacts, &dir).map_err(value_err)?;
    }

    let mut csv = Vec::new();
    write_metrics_csv(&artifacts.metrics, &mut csv).map_err(value_err)?;
    let csv = String::from_utf8(csv).map_err(value_err)?;
    let summary = serde_json::to_string(&RunSummary::from_artifacts(&artifacts)).map_err(value_err)?;
    let metrics = serde_json::to_string(&artifacts.metrics).map_err(value_err)?;
    let events = serde_json::to_string(&artifacts.events).map_err(value_err)?;

    let out = pyo3::types::PyDict::new(py);
    out.set_item("summary", to_python(py, &summary)?)?;
    out.set_item("metrics", to_python(py, &metrics)?)?;
    out.set_item("metrics_csv", csv)?;
    out.set_item("events", to_python(py, &events)?)?;
    Ok(out.into_any())
}

/// Jensen-Shannon divergence (base 2) between two label-count histograms.
#[pyfunction]
fn jsd(p: Vec<u64>, q: Vec<u64>) -> PyResult<f64> {
    let p = Histogram::new(p).map_err(value_err)?;
    let q = Histogram::new(q).map_err(value_err)?;
    jsd_core(&p, &q).map_err(value_err)
}

/// Clusters a symmetric affinity-distance matrix; returns one label per row.
#[pyfunction]
fn cluster(scores: Vec<Vec<f64>>, delta: f64) -> PyResult<Vec<usize>> {
    let n = scores.len();
    if scores.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("affinity matrix must be square"));
    }
    let flat = scores.into_iter().flatten().collect();
    let a = AffinityMatrix::from_scores((0..n).collect(), flat).map_err(value_err)?;
    let assign = cluster_clients(&a, delta).map_err(value_err)?;
    Ok((0..n).map(|i| assign.cluster_of(i).expect("every row labelled")).collect())
}

#[pymodule]
pub fn cflhkd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    Ok(())
}
