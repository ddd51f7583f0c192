//! Python module `belh`: the identity suite, tensor runs and the uniaxial
//! reduction, driven by the same TOML text the CLI reads.

use std::collections::HashMap;

use belh_core::config::{parse, RunFile, UniaxialFile};
use belh_core::dynamics::run as run_solver;
use belh_core::uniaxial::{cross_validate, run_scalar, run_sweep, BlowupReport, CompareConfig, ScalarRun};
use belh_core::verify::{cancellation_check, run_identity_suite, VerifyOptions};
use belh_core::{BulkParams, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyfunction]
fn version() -> &'static str {
    belh_core::output::CODE_VERSION
}

/// Run the identity suite; returns `(name, samples, max_residual, tolerance, passed)` rows.
#[pyfunction]
#[pyo3(signature = (seed=0, samples=10_000, coercivity_samples=1_000_000, grid_n=16, directions=20))]
fn verify(
    seed: u64,
    samples: usize,
    coercivity_samples: usize,
    grid_n: usize,
    directions: usize,
) -> PyResult<Vec<(String, usize, f64, f64, bool)>> {
    let opts = VerifyOptions { seed, samples, coercivity_samples, grid_n, directions, ..VerifyOptions::default() };
    let report = run_identity_suite(&opts).map_err(py_err)?;
    Ok(report.checks.into_iter().map(|c| (c.name, c.samples, c.max_residual, c.tolerance, c.passed)).collect())
}

/// Worst relative cancellation residual over random admissible states.
#[pyfunction]
#[pyo3(signature = (tumbling, elastic=1.0, samples=10_000, seed=0))]
fn cancellation_residual(tumbling: f64, elastic: f64, samples: usize, seed: u64) -> PyResult<f64> {
    let p = BulkParams::new(elastic, 1.0, 1.0, -0.7, 1.3, 0.9, tumbling, 0.0).map_err(|e| py_err(e.into()))?;
    Ok(cancellation_check(&p, samples, seed, false))
}

/// Integrate a `run` configuration; returns the diagnostics columns plus the
/// energy and chain-rule residuals.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn run(config: &str, seed: Option<u64>) -> PyResult<HashMap<String, Vec<f64>>> {
    let file: RunFile = parse(config, "<config>").map_err(py_err)?;
    let mut cfg = file.solver_config().map_err(py_err)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let out = run_solver(&cfg).map_err(py_err)?;
    let series = &out.series;
    let mut cols: HashMap<String, Vec<f64>> = HashMap::new();
    if let Some(first) = series.records.first() {
        let names: Vec<String> = first.csv_header().split(',').map(str::to_string).collect();
        for r in &series.records {
            for (name, v) in names.iter().zip(r.csv_row().split(',')) {
                cols.entry(name.clone()).or_default().push(v.parse().unwrap_or(f64::NAN));
            }
        }
    }
    cols.insert("physical_energy_residual".into(), series.physical_energy_residual());
    cols.insert("chain_rule_residual".into(), series.chain_rule_residual());
    Ok(cols)
}

fn summary(cfg: &ScalarRun, r: &BlowupReport) -> HashMap<String, f64> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    HashMap::from([
        ("a".to_string(), cfg.params.a),
        ("b".to_string(), cfg.params.b),
        ("c".to_string(), cfg.params.c),
        ("blowup".to_string(), r.blowup as u8 as f64),
        ("blowup_time".to_string(), opt(r.blowup_time)),
        ("threshold".to_string(), r.threshold),
        ("comparison_blowup_time".to_string(), opt(r.comparison_blowup_time)),
        ("growth_exponent".to_string(), opt(r.growth_exponent)),
        ("final_time".to_string(), r.final_time),
        ("max_q".to_string(), r.max_q()),
        ("moment_dominates".to_string(), r.moment_dominates() as u8 as f64),
    ])
}

/// Scalar runs of a `uniaxial` configuration: the base run, then the sweep.
#[pyfunction]
fn uniaxial(config: &str) -> PyResult<Vec<HashMap<String, f64>>> {
    let file: UniaxialFile = parse(config, "<config>").map_err(py_err)?;
    let mut rows = vec![summary(&file.scalar, &run_scalar(&file.scalar).map_err(py_err)?)];
    for (t, res) in file.sweep.iter().zip(run_sweep(&file.scalar, &file.sweep)) {
        let mut cfg = file.scalar.clone();
        cfg.params.a = t.a;
        cfg.params.b = t.b;
        cfg.params.c = t.c;
        rows.push(summary(&cfg, &res.map_err(py_err)?));
    }
    Ok(rows)
}

/// Tensor-versus-scalar comparison of a `compare-uniaxial` configuration.
#[pyfunction]
fn compare_uniaxial(config: &str) -> PyResult<HashMap<String, f64>> {
    let cfg: CompareConfig = parse(config, "<config>").map_err(py_err)?;
    let r = cross_validate(&cfg).map_err(py_err)?;
    Ok(HashMap::from([
        ("max_diff".to_string(), r.max_diff),
        ("max_deviation".to_string(), r.max_deviation),
        ("passed".to_string(), r.passed() as u8 as f64),
    ]))
}

#[pymodule]
fn belh(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(cancellation_residual, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(uniaxial, m)?)?;
    m.add_function(wrap_pyfunction!(compare_uniaxial, m)?)?;
    Ok(())
}
