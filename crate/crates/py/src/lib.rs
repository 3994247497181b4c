//! Python bindings. Structured results cross the boundary as JSON and are
//! handed back as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use rplsim_core::acceptance;
use rplsim_core::engine::config::{ConfigError, ScenarioConfig};
use rplsim_core::experiments::{self, Experiment, MatrixOptions, Results, Row, Scenario as Attack};
use rplsim_core::linklayer::RdcKind;
use rplsim_core::metrics;
use rplsim_core::scenarios;
use rplsim_core::trace;

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_rdc(s: &str) -> PyResult<Vec<RdcKind>> {
    match s.to_ascii_lowercase().as_str() {
        "dc" | "duty_cycled" => Ok(vec![RdcKind::DutyCycled]),
        "ao" | "always_on" => Ok(vec![RdcKind::AlwaysOn]),
        "both" => Ok(vec![RdcKind::DutyCycled, RdcKind::AlwaysOn]),
        other => Err(PyValueError::new_err(format!("unknown rdc {other:?}, expected dc, ao or both"))),
    }
}

fn one_rdc(s: &str) -> PyResult<RdcKind> {
    match parse_rdc(s)?.as_slice() {
        [one] => Ok(*one),
        _ => Err(PyValueError::new_err("expected dc or ao")),
    }
}

/// A validated scenario configuration.
#[pyclass(name = "Scenario", module = "rplsim", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// The shipped 28-node topology.
    #[staticmethod]
    fn reference() -> Self {
        PyScenario { cfg: scenarios::reference() }
    }

    /// The shipped topology with two wormhole endpoints.
    #[staticmethod]
    fn wormhole() -> Self {
        PyScenario { cfg: scenarios::wormhole() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = ScenarioConfig::from_json(text).map_err(config_err)?;
        cfg.validate().map_err(config_err)?;
        Ok(PyScenario { cfg })
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        let cfg = ScenarioConfig::from_file(&path).map_err(config_err)?;
        cfg.validate().map_err(config_err)?;
        Ok(PyScenario { cfg })
    }

    fn to_json(&self) -> String {
        self.cfg.to_json_pretty()
    }

    /// Copy configured for one experiment ("UM-I", "PSM-I", "PSMrp-I",
    /// "PSM-E"), attack ("NoAttack", "BH", "SF", "NA", "WH") and rdc ("dc", "ao").
    fn configure(&self, experiment: &str, attack: &str, rdc: &str) -> PyResult<Self> {
        let exp = Experiment::from_label(experiment)
            .ok_or_else(|| PyValueError::new_err(format!("unknown experiment {experiment:?}")))?;
        let scen =
            Attack::from_label(attack).ok_or_else(|| PyValueError::new_err(format!("unknown attack {attack:?}")))?;
        Ok(PyScenario { cfg: experiments::apply(&self.cfg, exp, scen, one_rdc(rdc)?) })
    }

    /// Copy with the dead-parent and route-lifetime timeouts shortened.
    fn with_short_timeouts(&self, seconds: f64) -> Self {
        PyScenario { cfg: experiments::with_short_timeouts(&self.cfg, seconds) }
    }

    #[getter]
    fn name(&self) -> String {
        self.cfg.name.clone()
    }

    #[getter]
    fn node_ids(&self) -> Vec<u16> {
        self.cfg.topology.iter().map(|n| n.id).collect()
    }

    #[getter]
    fn adversaries(&self) -> Vec<u16> {
        self.cfg.attack.adversary_ids.clone()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.cfg.duration_s
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, {} nodes)", self.cfg.name, self.cfg.topology.len())
    }
}

/// Runs one round; returns `(metrics, trace_ndjson)`.
#[pyfunction]
#[pyo3(signature = (scenario, seed, round = 0))]
fn run_round<'py>(py: Python<'py>, scenario: &PyScenario, seed: u64, round: u32) -> PyResult<(Bound<'py, PyAny>, String)> {
    let cfg = scenario.cfg.clone();
    let (m, t) = py.detach(move || experiments::run_round(&cfg, seed, round)).map_err(config_err)?;
    let text = String::from_utf8(trace::to_bytes(&t)).expect("trace is utf-8");
    Ok((to_py(py, &m)?, text))
}

/// Metrics of a trace previously returned by `run_round`.
#[pyfunction]
fn metrics_from_trace<'py>(py: Python<'py>, ndjson: &str) -> PyResult<Bound<'py, PyAny>> {
    let t = trace::read_ndjson(ndjson.as_bytes()).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let m = metrics::compute_metrics(&t).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &m)
}

/// Runs `rounds` rounds with seeds `seed..seed+rounds` and aggregates them.
#[pyfunction]
#[pyo3(signature = (scenario, rounds = 10, seed = 1))]
fn run_set<'py>(py: Python<'py>, scenario: &PyScenario, rounds: u32, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = scenario.cfg.clone();
    let set = py.detach(move || experiments::run_set(&cfg, rounds, seed, false)).map_err(config_err)?;
    to_py(py, &set.aggregate)
}

/// Every experiment against every attack on the shipped topologies.
#[pyfunction]
#[pyo3(signature = (rounds = 10, seed = 1, rdc = "both"))]
fn run_matrix<'py>(py: Python<'py>, rounds: u32, seed: u64, rdc: &str) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = MatrixOptions::full(rounds, seed);
    opts.rdcs = parse_rdc(rdc)?;
    let rows = py.detach(move || experiments::run_matrix(&scenarios::topologies(), &opts)).map_err(config_err)?;
    to_py(py, &rows)
}

/// Baseline, extra routers (M1) and shorter timeouts (M2) on the shipped topologies.
#[pyfunction]
#[pyo3(signature = (rounds = 10, seed = 1, rdc = "both"))]
fn run_mitigations<'py>(py: Python<'py>, rounds: u32, seed: u64, rdc: &str) -> PyResult<Bound<'py, PyAny>> {
    let rdcs = parse_rdc(rdc)?;
    let rows = py
        .detach(move || {
            experiments::run_mitigations(&scenarios::topologies(), &scenarios::extra_routers(), &rdcs, rounds, seed)
        })
        .map_err(config_err)?;
    to_py(py, &rows)
}

/// Threshold checks over rows from `run_matrix` and `run_mitigations`.
/// Returns `(criterion, status, line)` tuples.
#[pyfunction]
fn evaluate(rows: &Bound<'_, PyAny>) -> PyResult<Vec<(u8, String, String)>> {
    let rows: Vec<Row> = from_py(rows)?;
    let results = Results::new(rows);
    Ok(acceptance::evaluate(&results, &scenarios::topologies())
        .into_iter()
        .map(|c| (c.id, format!("{:?}", c.status).to_lowercase(), c.line()))
        .collect())
}

/// Writes the per-panel CSVs for the given rows; returns the file names.
#[pyfunction]
fn write_report(rows: &Bound<'_, PyAny>, out: std::path::PathBuf) -> PyResult<Vec<String>> {
    let rows: Vec<Row> = from_py(rows)?;
    experiments::write_report(&out, &Results::new(rows)).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Two-sided 95% Student-t half-width.
#[pyfunction]
fn ci95(values: Vec<f64>) -> f64 {
    metrics::ci95(&values)
}

#[pyfunction]
fn t_quantile_975(dof: usize) -> PyResult<f64> {
    if dof == 0 {
        return Err(PyValueError::new_err("dof must be positive"));
    }
    Ok(metrics::t_quantile_975(dof))
}

#[pymodule]
#[pyo3(name = "rplsim")]
fn rplsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(run_round, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_from_trace, m)?)?;
    m.add_function(wrap_pyfunction!(run_set, m)?)?;
    m.add_function(wrap_pyfunction!(run_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(run_mitigations, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(write_report, m)?)?;
    m.add_function(wrap_pyfunction!(ci95, m)?)?;
    m.add_function(wrap_pyfunction!(t_quantile_975, m)?)?;
    m.add("EXPERIMENTS", Experiment::ALL.iter().map(|e| e.label()).collect::<Vec<_>>())?;
    m.add("ATTACKS", Attack::ALL.iter().map(|s| s.label()).collect::<Vec<_>>())?;
    m.add("SCHEMA_VERSION", metrics::SCHEMA_VERSION)?;
    Ok(())
}
