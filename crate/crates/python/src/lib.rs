//! Python bindings: models, evidence, the exact and EP engines, sampling and
//! the exact-vs-EP comparison.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ctbn::cli::{self, parse_evidence, parse_model, parse_topology, EpArgs, TrajectoryDump};
use ctbn::ep::{run_filter, EpOptions, FilterResult};
use ctbn::exact::{joint_intensity, ExactInference, ExactOptions};
use ctbn::model::{CtbnModel, EvidenceTimeline};
use ctbn::sampler::sample_trajectories;
use ctbn::scope::Scope;

create_exception!(pyctbn, CtbnError, PyException, "Raised for invalid models, evidence or arguments.");
create_exception!(pyctbn, ImpossibleEvidenceError, CtbnError, "The evidence has zero probability.");
create_exception!(pyctbn, SizeCapError, CtbnError, "The joint state space exceeds the exact-engine cap.");

fn err(e: ctbn::CtbnError) -> PyErr {
    match e {
        ctbn::CtbnError::ImpossibleEvidence(_) => ImpossibleEvidenceError::new_err(e.to_string()),
        ctbn::CtbnError::SizeCap { .. } => SizeCapError::new_err(e.to_string()),
        _ => CtbnError::new_err(e.to_string()),
    }
}

fn scope_of(model: &CtbnModel, vars: Option<Vec<String>>) -> ctbn::Result<Scope> {
    match vars {
        None => Ok(model.full_scope()),
        Some(names) => {
            let ids = names.iter().map(|n| model.var(n)).collect::<ctbn::Result<Vec<_>>>()?;
            model.scope(&ids)
        }
    }
}

fn labels(model: &CtbnModel, scope: &Scope) -> Vec<String> {
    (0..scope.size()).map(|i| model.state_label(scope, i)).collect()
}

/// A validated CTBN model.
#[pyclass(name = "Model", module = "pyctbn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: CtbnModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_model(text).map(|inner| PyModel { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        cli::load_model(std::path::Path::new(path)).map(|inner| PyModel { inner }).map_err(err)
    }

    /// Every violation found in a model file; empty when it is valid.
    #[staticmethod]
    fn validate_json(text: &str) -> PyResult<Vec<String>> {
        match parse_model(text) {
            Ok(_) => Ok(vec![]),
            Err(ctbn::CtbnError::Validation(issues)) => Ok(issues.iter().map(|i| i.to_string()).collect()),
            Err(e) => Err(err(e)),
        }
    }

    fn to_json(&self) -> String {
        cli::model_to_json(&self.inner)
    }

    #[getter]
    fn variables(&self) -> Vec<(String, Vec<String>)> {
        self.inner.variables.iter().map(|v| (v.name.clone(), v.states.clone())).collect()
    }

    /// Labels of the joint states of `vars` (every variable by default).
    #[pyo3(signature = (vars=None))]
    fn state_labels(&self, vars: Option<Vec<String>>) -> PyResult<Vec<String>> {
        Ok(labels(&self.inner, &scope_of(&self.inner, vars).map_err(err)?))
    }

    /// Amalgamated joint intensity matrix, rows in joint-state order.
    fn joint_intensity(&self) -> PyResult<Vec<Vec<f64>>> {
        let q = joint_intensity(&self.inner, ExactOptions::default()).map_err(err)?;
        let m = q.matrix();
        Ok((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        let names: Vec<&str> = self.inner.variables.iter().map(|v| v.name.as_str()).collect();
        format!("Model({})", names.join(", "))
    }
}

/// An evidence timeline over a model's variables.
#[pyclass(name = "Evidence", module = "pyctbn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyEvidence {
    model: CtbnModel,
    inner: EvidenceTimeline,
}

#[pymethods]
impl PyEvidence {
    #[new]
    fn new(model: &PyModel, t0: f64, t1: f64) -> Self {
        PyEvidence { model: model.inner.clone(), inner: EvidenceTimeline::empty(t0, t1) }
    }

    #[staticmethod]
    fn from_json(model: &PyModel, text: &str) -> PyResult<Self> {
        let inner = parse_evidence(&model.inner, text).map_err(err)?;
        Ok(PyEvidence { model: model.inner.clone(), inner })
    }

    fn to_json(&self) -> String {
        cli::evidence_to_json(&self.model, &self.inner)
    }

    #[pyo3(signature = (var, value, start, end))]
    fn interval(&mut self, var: &str, value: &str, start: f64, end: f64) -> PyResult<()> {
        let (v, x) = self.model.state(var, value).map_err(err)?;
        self.inner = self.inner.clone().interval(v, x, start, end);
        Ok(())
    }

    fn point(&mut self, var: &str, value: &str, t: f64) -> PyResult<()> {
        let (v, x) = self.model.state(var, value).map_err(err)?;
        self.inner = self.inner.clone().point(v, x, t);
        Ok(())
    }

    fn transition(&mut self, var: &str, from_value: &str, to_value: &str, t: f64) -> PyResult<()> {
        let (v, a) = self.model.state(var, from_value).map_err(err)?;
        let (_, b) = self.model.state(var, to_value).map_err(err)?;
        self.inner = self.inner.clone().transition(v, a, b, t);
        Ok(())
    }

    #[getter]
    fn horizon(&self) -> (f64, f64) {
        self.inner.horizon
    }
}

/// Exact filtering over the joint process.
#[pyclass(name = "ExactEngine", module = "pyctbn", frozen)]
pub struct PyExact {
    model: CtbnModel,
    inner: ExactInference,
}

#[pymethods]
impl PyExact {
    #[new]
    #[pyo3(signature = (model, evidence, max_joint_states=ctbn::exact::DEFAULT_MAX_JOINT_STATES))]
    fn new(model: &PyModel, evidence: &PyEvidence, max_joint_states: usize) -> PyResult<Self> {
        let inner = ExactInference::new(&model.inner, &evidence.inner, ExactOptions { max_joint_states }).map_err(err)?;
        Ok(PyExact { model: model.inner.clone(), inner })
    }

    /// Distribution over the joint states of `vars` at `t`.
    #[pyo3(signature = (t, vars=None))]
    fn marginal(&self, t: f64, vars: Option<Vec<String>>) -> PyResult<Vec<f64>> {
        let scope = scope_of(&self.model, vars).map_err(err)?;
        Ok(self.inner.query(t, &scope).map_err(err)?.to_full())
    }

    /// Log-probability of the interval and point evidence.
    #[getter]
    fn log_evidence(&self) -> f64 {
        self.inner.log_evidence()
    }
}

/// Expectation-propagation filtering over a cluster graph.
#[pyclass(name = "EpFilter", module = "pyctbn", frozen)]
pub struct PyEp {
    model: CtbnModel,
    inner: FilterResult,
}

#[pymethods]
impl PyEp {
    #[new]
    #[pyo3(signature = (model, evidence, tol=1e-6, max_iters=100, topology_json=None))]
    fn new(model: &PyModel, evidence: &PyEvidence, tol: f64, max_iters: usize, topology_json: Option<&str>) -> PyResult<Self> {
        let topo = topology_json.map(|t| parse_topology(&model.inner, t)).transpose().map_err(err)?;
        let opts = EpOptions { tol, max_iters, ..EpOptions::default() };
        let inner = run_filter(&model.inner, &evidence.inner, topo, &opts).map_err(err)?;
        Ok(PyEp { model: model.inner.clone(), inner })
    }

    #[pyo3(signature = (t, vars=None))]
    fn marginal(&self, t: f64, vars: Option<Vec<String>>) -> PyResult<Vec<f64>> {
        let scope = scope_of(&self.model, vars).map_err(err)?;
        Ok(self.inner.query(t, &scope).map_err(err)?.to_full())
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    /// Per-segment convergence reports.
    fn reports<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .segments
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("start", s.state.segment.start)?;
                d.set_item("end", s.state.segment.end)?;
                d.set_item("sweeps", s.report.sweeps)?;
                d.set_item("converged", s.report.converged)?;
                d.set_item("max_change", s.report.max_change)?;
                d.set_item("residual", s.report.residual)?;
                Ok(d)
            })
            .collect()
    }
}

/// `Σ p ln(p/q)`; infinite when `q` misses mass of `p`.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    cli::kl_divergence(&p, &q).map_err(err)
}

/// Trajectory dump (JSON) of `n` forward samples on `[0, t_end]`.
#[pyfunction]
#[pyo3(signature = (model, n, t_end, seed=0))]
fn sample(model: &PyModel, n: usize, t_end: f64, seed: u64) -> PyResult<String> {
    let trajs = sample_trajectories(&model.inner, n, t_end, seed).map_err(err)?;
    let dump = TrajectoryDump::new(&model.inner, seed, t_end, &trajs);
    dump.to_json().map_err(err)
}

/// Exact against EP joint KL divergence at `points` evenly spaced times.
#[pyfunction]
#[pyo3(signature = (model, evidence, points=60, topology_json=None))]
fn compare<'py>(
    py: Python<'py>,
    model: &PyModel,
    evidence: &PyEvidence,
    points: usize,
    topology_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let topo = topology_json.map(|t| parse_topology(&model.inner, t)).transpose().map_err(err)?;
    let opts = EpArgs::default();
    let ep = EpOptions { tol: opts.tol, max_iters: opts.max_iters, ..EpOptions::default() };
    let (c, _) = cli::compare(&model.inner, &evidence.inner, points, topo, &ep).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("times", c.times)?;
    d.set_item("kl", c.kl)?;
    d.set_item("average", c.average)?;
    d.set_item("converged", c.converged)?;
    Ok(d)
}

/// `A -> B` reference network with a uniform start.
#[pyfunction]
fn two_variable_network() -> PyModel {
    PyModel { inner: ctbn::fixtures::two_variable_network() }
}

/// Binary chain `A -> B -> C -> D` whose children copy their parents.
#[pyfunction]
fn chain_network() -> PyModel {
    PyModel { inner: ctbn::fixtures::chain_network() }
}

#[pymodule]
fn pyctbn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("CtbnError", py.get_type::<CtbnError>())?;
    m.add("ImpossibleEvidenceError", py.get_type::<ImpossibleEvidenceError>())?;
    m.add("SizeCapError", py.get_type::<SizeCapError>())?;
    m.add("RNG_ALGORITHM", ctbn::sampler::RNG_ALGORITHM)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEvidence>()?;
    m.add_class::<PyExact>()?;
    m.add_class::<PyEp>()?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(two_variable_network, m)?)?;
    m.add_function(wrap_pyfunction!(chain_network, m)?)?;
    Ok(())
}
