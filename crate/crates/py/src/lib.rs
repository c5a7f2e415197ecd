//! Python bindings: kernel, mesh, state problem, OC runs and the manufactured solution.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nlsimp_core::assembly::DesignField;
use nlsimp_core::grid::{build_grid, TriangleMesh};
use nlsimp_core::harness::output::RunLog;
use nlsimp_core::harness::sources::{mms_rhs_nonlocal, mms_u as core_mms_u};
use nlsimp_core::harness::{self as h, NonlocalSetup, RunConfig, SourceSpec};
use nlsimp_core::kernel::KernelSpec;
use nlsimp_core::optimizer::{compliance_gradient, local_compliance_gradient, Termination};
use nlsimp_core::quadrature::QuadratureBudget;
use nlsimp_core::solve::{compliance, local_solve, pcg_solve, StateField};

create_exception!(nlsimp, NlsimpError, PyException, "Error raised by nlsimp; the message starts with `[class]`.");

fn err(e: nlsimp_core::Error) -> PyErr {
    NlsimpError::new_err(format!("[{}] {e}", e.class()))
}

fn config_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<Vec<f64>>() {
                Ok(list) => list.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                Err(_) => v.str()?.to_string(),
            };
            cfg.set(&key, &value).map_err(err)?;
        }
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Kernel `c r^(-2s) (delta^2 - r^2)_+^beta` with `(1/2) int A = 1`.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel(KernelSpec);

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (delta, s = 1.0 / 3.0, beta = 3.0))]
    fn new(delta: f64, s: f64, beta: f64) -> PyResult<Self> {
        KernelSpec::new(delta, s, beta).map(PyKernel).map_err(err)
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }

    #[getter]
    fn s(&self) -> f64 {
        self.0.s
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c_nrm
    }

    fn value(&self, r: f64) -> PyResult<f64> {
        self.0.eval(r).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Kernel(delta={}, s={}, beta={}, c={:e})", self.0.delta, self.0.s, self.0.beta, self.0.c_nrm)
    }
}

/// Uniform right-triangle mesh of the unit square padded by the horizon collar.
#[pyclass(name = "Mesh", frozen)]
struct PyMesh(TriangleMesh);

#[pymethods]
impl PyMesh {
    #[new]
    #[pyo3(signature = (n_side, delta = 0.0))]
    fn new(n_side: usize, delta: f64) -> PyResult<Self> {
        build_grid(n_side, delta).map(PyMesh).map_err(err)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.0.n_nodes()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.0.n_triangles()
    }

    #[getter]
    fn n_free(&self) -> usize {
        self.0.n_free()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    #[getter]
    fn meshed_area(&self) -> f64 {
        self.0.meshed_area()
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        self.0.nodes.iter().map(|p| (p[0], p[1])).collect()
    }

    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.0.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    fn centroids(&self) -> Vec<(f64, f64)> {
        (0..self.0.n_triangles()).map(|t| self.0.centroid(t)).map(|c| (c[0], c[1])).collect()
    }

    /// True for triangles inside the unit square.
    fn interior(&self) -> Vec<bool> {
        (0..self.0.n_triangles()).map(|t| self.0.is_interior(t)).collect()
    }
}

enum Kind {
    Nonlocal(Box<NonlocalSetup>),
    Local(TriangleMesh),
}

/// State problem at fixed `(n_side, delta)`; `delta = 0` is the local problem.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    kind: Kind,
    load: Vec<f64>,
    solver_tol: f64,
}

impl PyProblem {
    fn grid(&self) -> &TriangleMesh {
        match &self.kind {
            Kind::Nonlocal(s) => &s.mesh,
            Kind::Local(m) => m,
        }
    }

    fn design(&self, rho: Vec<f64>, p: f64) -> PyResult<DesignField> {
        let d = DesignField { rho, rho_min: 1e-3, rho_max: 1.0, gamma: 0.4, p };
        d.validate(self.grid()).map_err(err)?;
        Ok(d)
    }

    fn state(&self, d: &DesignField) -> PyResult<StateField> {
        let max_iter = 10 * self.grid().n_free().max(1);
        let (u, _) = match &self.kind {
            Kind::Nonlocal(s) => {
                let k = s.assembler.stiffness(d).map_err(err)?;
                pcg_solve(&s.mesh, &k, &self.load, self.solver_tol, max_iter)
            }
            Kind::Local(m) => local_solve(m, &d.conductivity(), &self.load, self.solver_tol, max_iter),
        }
        .map_err(err)?;
        Ok(u)
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (n_side, delta, s = 1.0 / 3.0, beta = 3.0, source = "uniform", solver_tol = 1e-10))]
    fn new(n_side: usize, delta: f64, s: f64, beta: f64, source: &str, solver_tol: f64) -> PyResult<Self> {
        let source = SourceSpec::parse(source).map_err(err)?;
        let (kind, load) = if delta == 0.0 {
            let mesh = build_grid(n_side, 0.0).map_err(err)?;
            let load = h::source_load(&source, &mesh, None, 1e-10).map_err(err)?;
            (Kind::Local(mesh), load)
        } else {
            let setup = NonlocalSetup::new(n_side, delta, s, beta, &QuadratureBudget::default(), None).map_err(err)?;
            let load = h::source_load(&source, &setup.mesh, Some(&setup.spec), 1e-10).map_err(err)?;
            (Kind::Nonlocal(Box::new(setup)), load)
        };
        Ok(PyProblem { kind, load, solver_tol })
    }

    #[getter]
    fn mesh(&self) -> PyMesh {
        PyMesh(self.grid().clone())
    }

    /// Solve for the state of design `rho`; returns `(compliance, nodal values)`.
    #[pyo3(signature = (rho, p = 1.0))]
    fn solve(&self, rho: Vec<f64>, p: f64) -> PyResult<(f64, Vec<f64>)> {
        let d = self.design(rho, p)?;
        let u = self.state(&d)?;
        Ok((compliance(self.grid(), &u, &self.load), u.values))
    }

    /// Compliance gradient with respect to the element densities.
    #[pyo3(signature = (rho, p = 1.0))]
    fn gradient(&self, rho: Vec<f64>, p: f64) -> PyResult<Vec<f64>> {
        let d = self.design(rho, p)?;
        let u = self.state(&d)?;
        match &self.kind {
            Kind::Nonlocal(s) => compliance_gradient(&s.assembler, &d, &u).map_err(err),
            Kind::Local(m) => Ok(local_compliance_gradient(m, &d, &u)),
        }
    }
}

/// Finished OC run.
#[pyclass(name = "OptimizeResult", frozen, get_all)]
struct PyOptimizeResult {
    delta: f64,
    h: f64,
    compliance: f64,
    iterations: usize,
    converged: bool,
    termination: String,
    rho: Vec<f64>,
    /// Rows `(iter, J, drho_norm, lambda, volume)`.
    history: Vec<(usize, f64, f64, f64, f64)>,
    mesh: Py<PyMesh>,
}

#[pymethods]
impl PyOptimizeResult {
    fn __repr__(&self) -> String {
        format!("OptimizeResult(delta={}, J={:.6e}, iterations={}, termination={})", self.delta, self.compliance, self.iterations, self.termination)
    }
}

fn result(py: Python<'_>, run: h::OptimizeRun) -> PyResult<PyOptimizeResult> {
    let o = run.outcome;
    Ok(PyOptimizeResult {
        delta: run.summary.delta,
        h: run.summary.h,
        compliance: o.compliance,
        iterations: run.summary.iterations,
        converged: o.termination == Termination::Converged,
        termination: match &o.termination {
            Termination::Converged => "converged".into(),
            Termination::MaxIterations => "max-iterations".into(),
            Termination::SolverFailure(m) => format!("solver-failure: {m}"),
        },
        rho: o.design.rho,
        history: o.history.records.iter().map(|r| (r.iter, r.compliance, r.change, r.lambda, r.volume)).collect(),
        mesh: Py::new(py, PyMesh(run.mesh))?,
    })
}

/// Nonlocal OC run from the uniform start; `settings` takes the CLI configuration keys.
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn optimize(py: Python<'_>, settings: Option<&Bound<'_, PyDict>>) -> PyResult<PyOptimizeResult> {
    let cfg = config_from(settings)?;
    let run = h::optimize_nonlocal(&cfg, cfg.delta, &RunLog::sink(), |_, _, _| {}).map_err(err)?;
    result(py, run)
}

/// Local OC run at `n_side`.
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn local_optimize(py: Python<'_>, settings: Option<&Bound<'_, PyDict>>) -> PyResult<PyOptimizeResult> {
    let cfg = config_from(settings)?;
    let run = h::optimize_local(&cfg, cfg.n_side, &RunLog::sink(), |_, _, _| {}).map_err(err)?;
    result(py, run)
}

/// Cross-evaluation over `deltas`: `(results, J)` with `J[i][j]` the design from `deltas[j]`
/// evaluated at `deltas[i]`.
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn cross_check(py: Python<'_>, settings: Option<&Bound<'_, PyDict>>) -> PyResult<(Vec<PyOptimizeResult>, Vec<Vec<f64>>)> {
    let cfg = config_from(settings)?;
    let (runs, m) = h::run_cross_check(&cfg, &RunLog::sink()).map_err(err)?;
    let runs = runs.into_iter().map(|r| result(py, r)).collect::<PyResult<_>>()?;
    Ok((runs, m))
}

/// Manufactured field `[x(1-x)y(1-y)]^2 sin(2 pi (x + y^2))`.
#[pyfunction]
fn mms_u(x: f64, y: f64) -> f64 {
    core_mms_u(x, y)
}

/// Nonlocal operator applied to the manufactured field at `(x, y)`.
#[pyfunction]
#[pyo3(signature = (x, y, delta, s = 1.0 / 3.0, beta = 3.0, tol = 1e-10))]
fn mms_rhs(x: f64, y: f64, delta: f64, s: f64, beta: f64, tol: f64) -> PyResult<f64> {
    let spec = KernelSpec::new(delta, s, beta).map_err(err)?;
    mms_rhs_nonlocal(&core_mms_u, &spec, [x, y], tol).map_err(err)
}

/// Manufactured-solution refinement study; rows `(n_side, h, relative L2 error)`.
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn mms_convergence(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(usize, f64, f64)>> {
    let cfg = config_from(settings)?;
    let rows = h::run_h_convergence(&cfg, &RunLog::sink()).map_err(err)?;
    Ok(rows.iter().map(|r| (r.n_side, r.h, r.rel_error)).collect())
}

#[pymodule]
fn nlsimp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NlsimpError", m.py().get_type::<NlsimpError>())?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyOptimizeResult>()?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(local_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(cross_check, m)?)?;
    m.add_function(wrap_pyfunction!(mms_u, m)?)?;
    m.add_function(wrap_pyfunction!(mms_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(mms_convergence, m)?)?;
    Ok(())
}
