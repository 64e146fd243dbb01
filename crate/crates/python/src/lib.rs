//! Python bindings. Structured results (solver outcomes, comparisons, traces)
//! cross the boundary as JSON and arrive as plain dicts and lists.

use bethe_core::cli::{self, Algorithm, SolveOptions};
use bethe_core::csp_decode;
use bethe_core::diffusion::{DiffusionState, SweepOrder};
use bethe_core::double_loop::{DoubleLoopState, InnerTolerance, TildeInit};
use bethe_core::generators::{self, InstanceSpec, Interaction, Topology};
use bethe_core::{BeliefVector, Error, Oracle, Temperature};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(bethe, CapacityError, PyException, "Exhaustive enumeration exceeds the joint-state cap.");

fn err(e: Error) -> PyErr {
    match e {
        Error::Capacity { .. } => CapacityError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// `beta` may be a positive float, `float("inf")` or the string `"inf"`.
fn temperature(beta: &Bound<'_, PyAny>) -> PyResult<Temperature> {
    if let Ok(b) = beta.extract::<f64>() {
        if b == f64::INFINITY {
            return Ok(Temperature::Infinite);
        }
        return Temperature::finite(b).map_err(err);
    }
    let s: String = beta.extract()?;
    s.parse().map_err(err)
}

/// Finite-`β` beliefs are returned as probabilities, `β = ∞` ones in log scale.
fn beliefs<'py>(py: Python<'py>, b: &BeliefVector) -> PyResult<Bound<'py, PyAny>> {
    let p = b.to_probability();
    to_py(py, &cli::BeliefsJson::from(p.as_ref().unwrap_or(b)))
}

fn order(s: &str) -> PyResult<SweepOrder> {
    match s {
        "forward" => Ok(SweepOrder::Forward),
        "forward-backward" | "forward_backward" => Ok(SweepOrder::ForwardBackward),
        _ => Err(PyValueError::new_err(format!("unknown sweep order {s:?}"))),
    }
}

fn tilde_init(s: &str, seed: u64) -> PyResult<TildeInit> {
    match s {
        "zero" => Ok(TildeInit::Zero),
        "random" => Ok(TildeInit::Random(seed)),
        _ => Err(PyValueError::new_err(format!("unknown tilde init {s:?}"))),
    }
}

/// A validated model: domains, unary tables and canonical hyperedge factors.
#[pyclass(name = "Model", module = "bethe")]
struct PyModel(bethe_core::Model);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(src: &str) -> PyResult<Self> {
        bethe_core::Model::from_json_str(src).map(PyModel).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        bethe_core::Model::read_json(path).map(PyModel).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.write_json(path).map_err(err)
    }

    #[getter]
    fn num_vars(&self) -> usize {
        self.0.num_vars()
    }

    #[getter]
    fn num_factors(&self) -> usize {
        self.0.num_factors()
    }

    #[getter]
    fn domains(&self) -> Vec<usize> {
        self.0.graph().domains().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<Vec<usize>> {
        self.0.graph().edges().to_vec()
    }

    fn unary(&self, v: usize) -> PyResult<Vec<f64>> {
        if v >= self.0.num_vars() {
            return Err(PyValueError::new_err(format!("variable {v} out of range")));
        }
        Ok(self.0.unary(v).to_vec())
    }

    /// Row-major table of hyperedge `e` (last variable fastest).
    fn factor(&self, e: usize) -> PyResult<Vec<f64>> {
        if e >= self.0.num_factors() {
            return Err(PyValueError::new_err(format!("factor {e} out of range")));
        }
        Ok(self.0.factor(e).to_vec())
    }

    fn evaluate(&self, x: Vec<usize>) -> PyResult<f64> {
        self.0.evaluate(&x).map_err(err)
    }

    fn is_supermodular(&self) -> bool {
        generators::is_supermodular(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("Model(num_vars={}, num_factors={})", self.0.num_vars(), self.0.num_factors())
    }
}

/// Builds a benchmark instance; `topology` is grid, complete, chain or random-tree.
#[pyfunction]
#[pyo3(signature = (topology, labels=2, interaction="random", seed=0, rows=None, cols=None, n=None, unary_scale=1.0, pairwise_scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    topology: &str,
    labels: usize,
    interaction: &str,
    seed: u64,
    rows: Option<usize>,
    cols: Option<usize>,
    n: Option<usize>,
    unary_scale: f64,
    pairwise_scale: f64,
) -> PyResult<PyModel> {
    let need = |x: Option<usize>, name: &str| x.ok_or_else(|| PyValueError::new_err(format!("{topology} needs {name}")));
    let t = match topology {
        "grid" => Topology::Grid {
            rows: need(rows, "rows")?,
            cols: need(cols, "cols")?,
        },
        "complete" => Topology::Complete(need(n, "n")?),
        "chain" => Topology::Chain(need(n, "n")?),
        "random-tree" | "random_tree" => Topology::RandomTree(need(n, "n")?),
        _ => return Err(PyValueError::new_err(format!("unknown topology {topology:?}"))),
    };
    let i: Interaction = interaction.parse().map_err(err)?;
    let mut spec = InstanceSpec::new(t, labels, i, seed);
    spec.unary_scale = unary_scale;
    spec.pairwise_scale = pairwise_scale;
    generators::generate(&spec).map(PyModel).map_err(err)
}

/// `x ⊕_β y`.
#[pyfunction]
fn combine(x: f64, y: f64, beta: &Bound<'_, PyAny>) -> PyResult<f64> {
    Ok(bethe_core::combine(temperature(beta)?, x, y))
}

/// `Φ(θ)` by enumeration; at `β = ∞` the maximum energy.
#[pyfunction]
#[pyo3(signature = (model, beta))]
fn log_partition(model: &PyModel, beta: &Bound<'_, PyAny>) -> PyResult<f64> {
    bethe_core::oracle::log_partition(&model.0, temperature(beta)?).map_err(err)
}

/// Exact marginals (finite `β`) or max-marginals (`β = ∞`) by enumeration.
#[pyfunction]
fn exact_marginals<'py>(py: Python<'py>, model: &PyModel, beta: &Bound<'_, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let b = bethe_core::oracle::exact_marginals(&model.0, temperature(beta)?).map_err(err)?;
    beliefs(py, &b)
}

#[pyfunction]
fn ground_states(model: &PyModel) -> PyResult<Vec<Vec<usize>>> {
    bethe_core::oracle::ground_states(&model.0).map_err(err)
}

/// Solutions of the CSP given by the active entries of the reparameterized
/// potentials after `messages` (defaults to `θ` itself).
#[pyfunction]
#[pyo3(signature = (model, messages=None, eps=csp_decode::DEFAULT_EPS, limit=1000))]
fn decode(model: &PyModel, messages: Option<Vec<Vec<f64>>>, eps: f64, limit: usize) -> PyResult<(Vec<Vec<usize>>, bool)> {
    let g = model.0.graph();
    let tables = match messages {
        Some(t) => {
            let msgs = bethe_core::MessageVector::from_tables(g, &t).map_err(err)?;
            model.0.reparam_potentials(&msgs)
        }
        None => model.0.potentials().clone(),
    };
    let s = csp_decode::decode_ground_states(&model.0, &tables, eps, limit).map_err(err)?;
    Ok((s.assignments, s.truncated))
}

#[allow(clippy::too_many_arguments)]
fn options(
    algorithm: &str,
    beta: &Bound<'_, PyAny>,
    tol: Option<f64>,
    max_sweeps: Option<usize>,
    sweep_order: &str,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
    inner_tol: Option<f64>,
    max_inner: Option<usize>,
    init: &str,
    seed: u64,
    eps_active: Option<f64>,
    max_solutions: Option<usize>,
) -> PyResult<SolveOptions> {
    let alg = match algorithm {
        "diffusion" => Algorithm::Diffusion,
        "double_loop" | "double-loop" => Algorithm::DoubleLoop,
        "oracle" => Algorithm::Oracle,
        _ => return Err(PyValueError::new_err(format!("unknown algorithm {algorithm:?}"))),
    };
    let mut o = SolveOptions::new(alg, temperature(beta)?);
    o.order = order(sweep_order)?;
    o.tilde_init = tilde_init(init, seed)?;
    if let Some(t) = tol {
        o.tol = t;
    }
    if let Some(n) = max_sweeps {
        o.max_sweeps = n;
    }
    if let Some(t) = outer_tol {
        o.run.outer_tol = t;
    }
    if let Some(n) = max_outer {
        o.run.max_outer = n;
    }
    if let Some(t) = inner_tol {
        o.run.inner_tol = InnerTolerance::Fixed(t);
    }
    if let Some(n) = max_inner {
        o.run.max_inner = n;
    }
    if let Some(e) = eps_active {
        o.eps_active = e;
        o.run.mask_eps = e;
    }
    if let Some(n) = max_solutions {
        o.max_solutions = n;
    }
    o.validate().map_err(err)?;
    Ok(o)
}

/// Runs a solver and returns the results-file dict (plus `trace_csv`).
#[pyfunction]
#[pyo3(signature = (model, algorithm="double_loop", beta=None, *, tol=None, max_sweeps=None, sweep_order="forward", outer_tol=None, max_outer=None, inner_tol=None, max_inner=None, tilde_init="zero", seed=0, eps_active=None, max_solutions=None))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    model: &PyModel,
    algorithm: &str,
    beta: Option<&Bound<'py, PyAny>>,
    tol: Option<f64>,
    max_sweeps: Option<usize>,
    sweep_order: &str,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
    inner_tol: Option<f64>,
    max_inner: Option<usize>,
    tilde_init: &str,
    seed: u64,
    eps_active: Option<f64>,
    max_solutions: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let inf = f64::INFINITY.into_pyobject(py)?.into_any();
    let o = options(
        algorithm,
        beta.unwrap_or(&inf),
        tol,
        max_sweeps,
        sweep_order,
        outer_tol,
        max_outer,
        inner_tol,
        max_inner,
        tilde_init,
        seed,
        eps_active,
        max_solutions,
    )?;
    let out = cli::solve(&model.0, &o, Oracle::default()).map_err(err)?;
    let d = to_py(py, &out)?;
    d.set_item("trace_csv", &out.trace_csv)?;
    Ok(d)
}

/// Runs a solver and measures it against exhaustive enumeration.
#[pyfunction]
#[pyo3(signature = (model, algorithm="double_loop", beta=None, *, tol=None, max_sweeps=None, sweep_order="forward", outer_tol=None, max_outer=None, inner_tol=None, max_inner=None, tilde_init="zero", seed=0, eps_active=None))]
#[allow(clippy::too_many_arguments)]
fn compare<'py>(
    py: Python<'py>,
    model: &PyModel,
    algorithm: &str,
    beta: Option<&Bound<'py, PyAny>>,
    tol: Option<f64>,
    max_sweeps: Option<usize>,
    sweep_order: &str,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
    inner_tol: Option<f64>,
    max_inner: Option<usize>,
    tilde_init: &str,
    seed: u64,
    eps_active: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let inf = f64::INFINITY.into_pyobject(py)?.into_any();
    let oracle = Oracle::default();
    let o = options(
        algorithm,
        beta.unwrap_or(&inf),
        tol,
        max_sweeps,
        sweep_order,
        outer_tol,
        max_outer,
        inner_tol,
        max_inner,
        tilde_init,
        seed,
        eps_active,
        Some(oracle.cap as usize),
    )?;
    to_py(py, &cli::compare(&model.0, &o, oracle).map_err(err)?)
}

/// Stepwise access to diffusion.
#[pyclass(name = "Diffusion", module = "bethe")]
struct PyDiffusion(DiffusionState);

#[pymethods]
impl PyDiffusion {
    #[new]
    #[pyo3(signature = (model, beta, sweep_order="forward"))]
    fn new(model: &PyModel, beta: &Bound<'_, PyAny>, sweep_order: &str) -> PyResult<Self> {
        let mut s = DiffusionState::new(model.0.clone(), temperature(beta)?);
        s.set_order(order(sweep_order)?);
        Ok(PyDiffusion(s))
    }

    /// One sweep; returns the largest message change.
    fn sweep(&mut self) -> f64 {
        let o = self.0.order();
        self.0.sweep(o)
    }

    /// Returns `(converged, sweeps, residual, dual_value)`.
    #[pyo3(signature = (tol=1e-9, max_sweeps=10_000))]
    fn run(&mut self, tol: f64, max_sweeps: usize) -> (bool, usize, f64, f64) {
        let r = self.0.run_to_convergence(tol, max_sweeps);
        (r.converged, r.iterations, r.final_residual, r.dual_value)
    }

    #[getter]
    fn dual_objective(&self) -> f64 {
        self.0.dual_objective()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.0.fixed_point_residual()
    }

    #[getter]
    fn sweep_count(&self) -> usize {
        self.0.sweep_count()
    }

    /// Messages per (hyperedge, position) pair in canonical order.
    #[getter]
    fn messages(&self) -> Vec<Vec<f64>> {
        self.0.messages().to_tables(self.0.model().graph())
    }

    fn pseudo_marginals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        beliefs(py, &self.0.pseudo_marginals())
    }

    fn active_mask_digest(&self, eps: f64) -> PyResult<String> {
        Ok(csp_decode::active_mask(&self.0.reparameterized(), eps).map_err(err)?.digest())
    }
}

/// Stepwise access to the double loop.
#[pyclass(name = "DoubleLoop", module = "bethe")]
struct PyDoubleLoop(DoubleLoopState);

#[pymethods]
impl PyDoubleLoop {
    #[new]
    #[pyo3(signature = (model, beta, tilde_init="zero", seed=0))]
    fn new(model: &PyModel, beta: &Bound<'_, PyAny>, tilde_init: &str, seed: u64) -> PyResult<Self> {
        let init = self::tilde_init(tilde_init, seed)?;
        Ok(PyDoubleLoop(DoubleLoopState::new(model.0.clone(), temperature(beta)?, init)))
    }

    /// One outer iteration; returns its measurements as a dict.
    #[pyo3(signature = (inner_tol=1e-9, max_inner=10_000))]
    fn outer_step<'py>(&mut self, py: Python<'py>, inner_tol: f64, max_inner: usize) -> PyResult<Bound<'py, PyAny>> {
        let s = self.0.outer_step(inner_tol, max_inner);
        let d = pyo3::types::PyDict::new(py);
        d.set_item("bp_residual", s.bp_residual)?;
        d.set_item("u_before", s.u_before)?;
        d.set_item("u_after_inner", s.u_after_inner)?;
        d.set_item("u_hat", s.u_hat)?;
        d.set_item("inner_sweeps", s.inner.iterations)?;
        d.set_item("inner_converged", s.inner.converged)?;
        Ok(d.into_any())
    }

    #[getter]
    fn bp_residual(&self) -> f64 {
        self.0.bp_residual()
    }

    #[getter]
    fn u_hat(&self) -> f64 {
        self.0.u_hat()
    }

    #[getter]
    fn outer_count(&self) -> usize {
        self.0.outer_count()
    }

    #[getter]
    fn tilde(&self) -> Vec<Vec<f64>> {
        self.0.tilde().tables().to_vec()
    }

    fn bp_marginals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        beliefs(py, &self.0.bp_marginals())
    }

    fn active_mask_digest(&self, eps: f64) -> String {
        self.0.active_mask(eps).digest()
    }
}

#[pymodule]
fn bethe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDiffusion>()?;
    m.add_class::<PyDoubleLoop>()?;
    m.add("CapacityError", m.py().get_type::<CapacityError>())?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(exact_marginals, m)?)?;
    m.add_function(wrap_pyfunction!(ground_states, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
