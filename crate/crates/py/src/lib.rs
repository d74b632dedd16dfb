//! Python bindings. Users are numbered from 1 on the Python side, matching
//! the topology file format; matrices travel as lists of rows.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nalgebra::DMatrix;
use tim_core::admission::{self, SearchMode};
use tim_core::manifold::{self, Mat};
use tim_core::objectives::{self, SmoothedL1Params};
use tim_core::report::AdmissionReport;
use tim_core::{experiment, topology_io, AdmissionConfig, Error, NetworkTopology, TangentVector, TrustRegionConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Dimension(_) | Error::Parse { .. } | Error::OracleGuard { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn from_mat(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn tangent(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<TangentVector> {
    Ok(TangentVector::new(to_mat(u)?, to_mat(v)?).map_err(to_py)?)
}

type Pair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn pair(t: &TangentVector) -> Pair {
    (from_mat(&t.u), from_mat(&t.v))
}

/// Directed interference graph over `k` users.
#[pyclass(name = "Topology", frozen)]
struct PyTopology {
    inner: NetworkTopology,
}

#[pymethods]
impl PyTopology {
    /// `links` holds 1-based `(i, j)` pairs, `i != j`.
    #[new]
    #[pyo3(signature = (k, links=Vec::new()))]
    fn new(k: usize, links: Vec<(usize, usize)>) -> PyResult<Self> {
        if links.iter().any(|&(i, j)| i == 0 || j == 0) {
            return Err(PyValueError::new_err("users are numbered from 1"));
        }
        let inner = NetworkTopology::new(k, links.into_iter().map(|(i, j)| (i - 1, j - 1))).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Uniformly random topology with `links` distinct links.
    #[staticmethod]
    #[pyo3(signature = (k, links, seed=0))]
    fn random(k: usize, links: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: experiment::gen_topology(k, links, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn fully_connected(k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: NetworkTopology::fully_connected(k).map_err(to_py)?,
        })
    }

    /// Parses the text topology format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: topology_io::parse_topology(text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        topology_io::format_topology(&self.inner)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn links(&self) -> Vec<(usize, usize)> {
        self.inner.links().iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.num_links()
    }

    fn __repr__(&self) -> String {
        format!("Topology(k={}, links={})", self.inner.k(), self.inner.num_links())
    }
}

/// Factor pair `(U, V)` representing `X = U V^T`.
#[pyclass(name = "FactoredPoint", frozen)]
struct PyPoint {
    inner: manifold::FactoredPoint,
}

#[pymethods]
impl PyPoint {
    #[new]
    fn new(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: manifold::FactoredPoint::new(to_mat(u)?, to_mat(v)?).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (k, r, seed=0))]
    fn random(k: usize, r: usize, seed: u64) -> PyResult<Self> {
        let shape = manifold::ManifoldShape::new(k, r).map_err(to_py)?;
        Ok(Self {
            inner: manifold::random_point(shape, seed),
        })
    }

    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        from_mat(self.inner.u())
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        from_mat(self.inner.v())
    }

    /// Dense `U V^T`.
    fn matrix(&self) -> Vec<Vec<f64>> {
        from_mat(&objectives::assemble_matrix(&self.inner))
    }

    fn diag(&self) -> Vec<f64> {
        objectives::extract_diag(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("FactoredPoint(k={}, r={})", self.inner.u().nrows(), self.inner.u().ncols())
    }
}

/// Metric `Tr(V^T V xi_U^T eta_U) + Tr(U^T U xi_V^T eta_V)`.
#[pyfunction]
fn inner(x: &PyPoint, xi: Pair, eta: Pair) -> PyResult<f64> {
    manifold::inner(&x.inner, &tangent(xi.0, xi.1)?, &tangent(eta.0, eta.1)?).map_err(to_py)
}

#[pyfunction]
fn project_horizontal(x: &PyPoint, eta: Pair) -> PyResult<Pair> {
    let t = manifold::project_horizontal(&x.inner, &tangent(eta.0, eta.1)?).map_err(to_py)?;
    Ok(pair(&t))
}

#[pyfunction]
fn riemannian_gradient(x: &PyPoint, egrad: Pair) -> PyResult<Pair> {
    let t = manifold::riemannian_gradient(&x.inner, &tangent(egrad.0, egrad.1)?).map_err(to_py)?;
    Ok(pair(&t))
}

/// `(U + xi_U, V + xi_V)`.
#[pyfunction]
fn retract(x: &PyPoint, xi: Pair) -> PyResult<PyPoint> {
    let r = manifold::retract(&x.inner, &tangent(xi.0, xi.1)?).map_err(to_py)?;
    Ok(PyPoint { inner: r.point })
}

#[pyfunction]
#[pyo3(signature = (x, topology, lambda_=0.5, rho=0.01, epsilon=0.01))]
fn sparsity_cost(x: &PyPoint, topology: &PyTopology, lambda_: f64, rho: f64, epsilon: f64) -> PyResult<f64> {
    let p = SmoothedL1Params::new(lambda_, rho, epsilon).map_err(to_py)?;
    objectives::sparsity_cost(&x.inner, &topology.inner, &p).map_err(to_py)
}

/// `||P_Omega(X) - I||_F^2` over the alignment constraints of `users` (1-based).
#[pyfunction]
fn completion_cost(x: &PyPoint, topology: &PyTopology, users: Vec<usize>) -> PyResult<f64> {
    let users = zero_based(&users)?;
    let mask = objectives::ObservationMask::for_users(&topology.inner, &users).map_err(to_py)?;
    objectives::completion_cost(&x.inner, &mask).map_err(to_py)
}

fn zero_based(users: &[usize]) -> PyResult<Vec<usize>> {
    users
        .iter()
        .map(|&u| u.checked_sub(1).ok_or_else(|| PyValueError::new_err("users are numbered from 1")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn config(
    rank: usize,
    lambda: f64,
    rho: f64,
    epsilon: f64,
    feas_tol: f64,
    restarts: usize,
    max_iters: usize,
    seed: u64,
    scan: bool,
) -> PyResult<AdmissionConfig> {
    Ok(AdmissionConfig {
        params: SmoothedL1Params::new(lambda, rho, epsilon).map_err(to_py)?,
        feasibility_tol: feas_tol,
        restarts,
        tr: TrustRegionConfig {
            max_outer_iters: max_iters,
            ..TrustRegionConfig::default()
        },
        seed,
        search: if scan { SearchMode::Scan } else { SearchMode::Bisection },
        ..AdmissionConfig::new(rank)
    })
}

/// Outcome of the three-stage pipeline.
#[pyclass(name = "Admission", frozen)]
struct PyAdmission {
    #[pyo3(get)]
    n0: usize,
    #[pyo3(get)]
    admitted: Vec<usize>,
    #[pyo3(get)]
    priority: Vec<usize>,
    #[pyo3(get)]
    stage1_diag: Vec<f64>,
    #[pyo3(get)]
    residual: f64,
    /// Rows are decoders of the admitted users, in admitted order.
    #[pyo3(get)]
    decoders: Vec<Vec<f64>>,
    #[pyo3(get)]
    precoders: Vec<Vec<f64>>,
    json: String,
}

#[pymethods]
impl PyAdmission {
    /// Full report as JSON text.
    fn to_json(&self) -> String {
        self.json.clone()
    }

    fn __repr__(&self) -> String {
        format!("Admission(n0={}, admitted={:?})", self.n0, self.admitted)
    }
}

#[pyfunction]
#[pyo3(signature = (topology, rank, lambda_=0.5, rho=0.01, epsilon=0.01, feas_tol=1e-3, restarts=3, max_iters=500, seed=0, scan=false))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    topology: &PyTopology,
    rank: usize,
    lambda_: f64,
    rho: f64,
    epsilon: f64,
    feas_tol: f64,
    restarts: usize,
    max_iters: usize,
    seed: u64,
    scan: bool,
) -> PyResult<PyAdmission> {
    let cfg = config(rank, lambda_, rho, epsilon, feas_tol, restarts, max_iters, seed, scan)?;
    let topo = &topology.inner;
    let res = py.detach(|| admission::run_pipeline(topo, &cfg)).map_err(to_py)?;
    let report = AdmissionReport::new(topo, &cfg, &res);
    Ok(PyAdmission {
        n0: res.n0,
        admitted: report.admitted.clone(),
        priority: report.priority.clone(),
        stage1_diag: res.stage1_diag.clone(),
        residual: res.feasibility_residual,
        decoders: from_mat(res.final_point.u()),
        precoders: from_mat(res.final_point.v()),
        json: report.to_json(),
    })
}

/// Returns `(feasible, residual)` for the 1-based user set.
#[pyfunction]
#[pyo3(signature = (topology, users, rank, feas_tol=1e-3, restarts=3, seed=0))]
fn feasibility_check(
    py: Python<'_>,
    topology: &PyTopology,
    users: Vec<usize>,
    rank: usize,
    feas_tol: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<(bool, f64)> {
    let cfg = config(rank, 0.5, 0.01, 0.01, feas_tol, restarts, 500, seed, false)?;
    let users = zero_based(&users)?;
    let topo = &topology.inner;
    let v = py
        .detach(|| admission::feasibility_check(topo, &users, &cfg))
        .map_err(to_py)?;
    Ok((v.feasible, v.residual))
}

/// Returns `(n_max, best_set)` by exhaustive search; refuses `k > 16`.
#[pyfunction]
#[pyo3(signature = (topology, rank, feas_tol=1e-3, restarts=3, seed=0))]
fn exhaustive_oracle(
    py: Python<'_>,
    topology: &PyTopology,
    rank: usize,
    feas_tol: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<(usize, Vec<usize>)> {
    let cfg = config(rank, 0.5, 0.01, 0.01, feas_tol, restarts, 500, seed, false)?;
    let topo = &topology.inner;
    let o = py.detach(|| admission::exhaustive_oracle(topo, &cfg)).map_err(to_py)?;
    Ok((o.n_max, o.best.iter().map(|i| i + 1).collect()))
}

#[pyfunction]
fn orthogonal_baseline(k: usize, r: usize) -> usize {
    admission::orthogonal_baseline(k, r)
}

#[pymodule]
fn tim_admission(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyPoint>()?;
    m.add_class::<PyAdmission>()?;
    m.add_function(wrap_pyfunction!(inner, m)?)?;
    m.add_function(wrap_pyfunction!(project_horizontal, m)?)?;
    m.add_function(wrap_pyfunction!(riemannian_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(retract, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity_cost, m)?)?;
    m.add_function(wrap_pyfunction!(completion_cost, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(feasibility_check, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonal_baseline, m)?)?;
    Ok(())
}
