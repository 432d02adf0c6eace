use msfem::config::{parse_method, RunConfig};
use msfem::online::{Method, MethodSpec};
use msfem::runner;
use msfem::MsfemError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn to_py(e: MsfemError) -> PyErr {
    match e {
        MsfemError::Config { .. } | MsfemError::InvalidInput(_) | MsfemError::Expression { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config(text: &str) -> PyResult<RunConfig> {
    RunConfig::parse(text).map_err(to_py)
}

/// Names of all methods, in the order of the CSV files.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

/// `(tau, Pe)` of the SUPG parameter for an element of diameter `diam`.
#[pyfunction]
fn tau_supg(diam: f64, bnorm: f64, mu_bar: f64) -> (f64, f64) {
    msfem::offline::tau_supg(diam, bnorm, mu_bar)
}

/// Runs a configuration given as text and returns the CSV.
#[pyfunction]
fn run_csv(py: Python<'_>, text: &str) -> PyResult<String> {
    let c = config(text)?;
    py.detach(|| runner::run(&c)).map(|s| s.csv()).map_err(to_py)
}

/// Runs a configuration and returns one dict per CSV row.
#[pyfunction]
fn run_rows<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = config(text)?;
    let summary = py.detach(|| runner::run(&c)).map_err(to_py)?;
    summary
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("alpha", r.alpha)?;
            d.set_item("method", &r.method)?;
            d.set_item("pathway", &r.pathway)?;
            d.set_item("err_oble", r.err_oble)?;
            d.set_item("err_full", r.err_full)?;
            d.set_item("norm_oble", r.norm_oble)?;
            d.set_item("norm_full", r.norm_full)?;
            d.set_item("overshoot", r.overshoot)?;
            d.set_item("offline_seconds", r.offline_seconds)?;
            d.set_item("online_seconds", r.online_seconds)?;
            d.set_item("singular", r.singular)?;
            Ok(d)
        })
        .collect()
}

/// Writes the field dump of `method` at the first alpha of the configuration.
#[pyfunction]
fn dump_field(py: Python<'_>, text: &str, method: &str, path: PathBuf) -> PyResult<()> {
    let c = config(text)?;
    let spec = parse_method(method).map_err(PyValueError::new_err)?;
    let spec = MethodSpec { form: c.form, ..spec }.validated().map_err(to_py)?;
    py.detach(|| runner::dump_field(&c, spec, &path)).map_err(to_py)
}

#[pymodule]
fn msfem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CSV_HEADER", runner::CSV_HEADER)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(tau_supg, m)?)?;
    m.add_function(wrap_pyfunction!(run_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_rows, m)?)?;
    m.add_function(wrap_pyfunction!(dump_field, m)?)?;
    Ok(())
}
