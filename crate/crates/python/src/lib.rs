//! Python bindings: instance-level entry points plus the full command line.
//!
//! Instances are given as a built-in id, a JSON string or a file path.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tancert::bestapprox::{find_certificate, project_feasible};
use tancert::cones::{check_nrcq, LocalData, Settings};
use tancert::fixtures::{builtin, BUILTIN};
use tancert::instance::Instance;
use tancert::report::tag;
use tancert::tanconvex::PolytopeV;
use tancert::{Error, Provenance};

fn py_err(e: impl Into<Error>) -> PyErr {
    let e = e.into();
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn load(instance: &str) -> PyResult<Instance> {
    if let Some(inst) = builtin(instance) {
        return inst.map_err(py_err);
    }
    let text = if instance.trim_start().starts_with('{') {
        instance.to_string()
    } else {
        std::fs::read_to_string(instance).map_err(|e| PyValueError::new_err(format!("{instance}: {e}")))?
    };
    Instance::from_json(&text).map_err(py_err)
}

fn provenance(p: Provenance) -> String {
    tag(p).as_str().unwrap_or_default().to_string()
}

/// Run the command line with `args` (without the program name).
/// Returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tancert".to_string()).chain(args);
    let code = tancert::cli::run_with(argv, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

#[pyfunction]
fn builtin_ids() -> Vec<String> {
    BUILTIN.iter().map(|(id, _)| id.to_string()).collect()
}

/// Nearest feasible point and its provenance (`"exact"` or `"sampled"`).
#[pyfunction]
fn project(instance: &str, x: Vec<f64>) -> PyResult<(Vec<f64>, String)> {
    let inst = load(instance)?;
    let p = project_feasible(&inst, &x).map_err(py_err)?;
    Ok((p.point, provenance(p.provenance)))
}

/// Multipliers and subgradients certifying `xbar` as the projection of `x`,
/// or `None` when no certificate exists.
#[pyfunction]
#[pyo3(signature = (instance, xbar, x, seed = 0))]
fn certificate(instance: &str, xbar: Vec<f64>, x: Vec<f64>, seed: u64) -> PyResult<Option<(Vec<f64>, Vec<Vec<f64>>)>> {
    let inst = load(instance)?;
    let settings = Settings { seed, ..Settings::default() };
    let local = LocalData::new(&inst, &xbar, &settings).map_err(py_err)?;
    let cert = find_certificate(&inst, &local, &x).map_err(py_err)?;
    Ok(cert.map(|c| (c.lambda, c.eta)))
}

/// Whether the polytopes, given by vertex lists, satisfy NRCQ.
#[pyfunction]
fn nrcq(n: usize, subdiffs: Vec<Vec<Vec<f64>>>) -> PyResult<bool> {
    let polys = subdiffs
        .into_iter()
        .map(|v| PolytopeV::new(v).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    if polys.iter().any(|p| p.dim() != n) {
        return Err(PyValueError::new_err(format!("subdifferentials must live in dimension {n}")));
    }
    let refs: Vec<&PolytopeV> = polys.iter().collect();
    Ok(check_nrcq(n, &refs).map_err(py_err)?.holds)
}

#[pymodule]
fn tancert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_ids, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(certificate, m)?)?;
    m.add_function(wrap_pyfunction!(nrcq, m)?)?;
    Ok(())
}
