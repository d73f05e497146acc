//! Python bindings for the `bqvc` estimator.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bqvc::envelope::{build_envelope, coverage, curvature, directional_quantiles};
use bqvc::ps::{fit_direction_field, MultistageFit, PsOptions};
use bqvc::sim::{analytic_coverage as analytic, gen_dataset, AnalyticDist, CoeffSet, ErrorDist, SimConfig};
use bqvc::{AdmmOptions, BasisSpec, Error};
use nalgebra::{DMatrix, DVector};

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::UndefinedMetric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Clamped B-spline basis on [0, 1] with its roughness penalty.
#[pyclass(name = "SplineBasis", module = "bqvc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySplineBasis {
    inner: bqvc::SplineBasis,
}

#[pymethods]
impl PySplineBasis {
    #[new]
    #[pyo3(signature = (degree = 3, knots = None, knot_count = None, knot_range = None))]
    fn new(
        degree: usize,
        knots: Option<Vec<f64>>,
        knot_count: Option<usize>,
        knot_range: Option<[f64; 2]>,
    ) -> PyResult<Self> {
        let knot_count = if knots.is_none() && knot_count.is_none() { Some(14) } else { knot_count };
        let spec = BasisSpec { degree, knots, knot_count, knot_range };
        Ok(PySplineBasis { inner: spec.build().map_err(to_py)? })
    }

    /// The simulation-study basis: cubic, 14 knots evenly spaced in [.02, .93].
    #[staticmethod]
    fn reproduction() -> Self {
        PySplineBasis { inner: bqvc::SplineBasis::reproduction_default() }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.inner.full_knots().to_vec()
    }

    fn eval(&self, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.eval(t).map_err(to_py)?.iter().copied().collect())
    }

    #[pyo3(signature = (t, order = 1))]
    fn eval_derivative(&self, t: f64, order: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.eval_derivative(t, order).map_err(to_py)?.iter().copied().collect())
    }

    fn omega(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.omega())
    }

    fn __repr__(&self) -> String {
        format!("SplineBasis(degree={}, dim={})", self.inner.degree(), self.inner.dim())
    }
}

/// `d` evenly spaced unit directions on the circle.
#[pyclass(name = "DirectionGrid", module = "bqvc_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDirectionGrid {
    inner: bqvc::DirectionGrid,
}

#[pymethods]
impl PyDirectionGrid {
    #[new]
    fn new(d: usize) -> PyResult<Self> {
        Ok(PyDirectionGrid { inner: bqvc::DirectionGrid::new(d).map_err(to_py)? })
    }

    fn directions(&self) -> Vec<[f64; 2]> {
        self.inner.directions().to_vec()
    }

    fn angles(&self) -> Vec<f64> {
        self.inner.angles().to_vec()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.spacing()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Bivariate functional responses with subject covariates.
#[pyclass(name = "Dataset", module = "bqvc_py", frozen)]
struct PyDataset {
    inner: bqvc::FunctionalDataset,
}

fn parse_coeff_set(s: &str) -> PyResult<CoeffSet> {
    match s {
        "smooth" => Ok(CoeffSet::Smooth),
        "rough" => Ok(CoeffSet::Rough),
        _ => Err(PyValueError::new_err(format!("unknown coefficient set `{s}` (smooth | rough)"))),
    }
}

fn parse_error(s: &str) -> PyResult<ErrorDist> {
    match s {
        "I" => Ok(ErrorDist::I),
        "II" => Ok(ErrorDist::II),
        "III" => Ok(ErrorDist::III),
        _ => Err(PyValueError::new_err(format!("unknown error distribution `{s}` (I | II | III)"))),
    }
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (n = 200, grid_points = 50, coeff_set = "smooth", error = "I", seed = 20240601))]
    fn simulate(n: usize, grid_points: usize, coeff_set: &str, error: &str, seed: u64) -> PyResult<Self> {
        let cfg = SimConfig {
            n,
            grid_points,
            coeff_set: parse_coeff_set(coeff_set)?,
            error: parse_error(error)?,
            seed,
            ..Default::default()
        };
        cfg.validate().map_err(to_py)?;
        Ok(PyDataset { inner: gen_dataset(&cfg, seed) })
    }

    #[staticmethod]
    fn read_csv(path: std::path::PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Ok(PyDataset { inner: bqvc::FunctionalDataset::read_csv(f).map_err(to_py)? })
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        self.inner.write_csv(f).map_err(to_py)
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn n_grid(&self) -> usize {
        self.inner.n_grid()
    }

    #[getter]
    fn n_covariates(&self) -> usize {
        self.inner.n_covariates()
    }

    fn t_grid(&self) -> Vec<f64> {
        self.inner.t_grid().to_vec()
    }

    fn responses(&self) -> Vec<[f64; 2]> {
        self.inner.responses().to_vec()
    }
}

/// Intersection of the halfplanes `sᵀv ≥ q(s)`.
#[pyclass(name = "Envelope", module = "bqvc_py", frozen)]
struct PyEnvelope {
    grid: bqvc::DirectionGrid,
    inner: bqvc::Envelope,
}

#[pymethods]
impl PyEnvelope {
    #[getter]
    fn vertices(&self) -> Vec<[f64; 2]> {
        self.inner.vertices.clone()
    }

    #[getter]
    fn empty(&self) -> bool {
        self.inner.empty
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q.clone()
    }

    fn curvature(&self) -> PyResult<f64> {
        curvature(&self.inner).map_err(to_py)
    }

    fn coverage(&self, points: Vec<[f64; 2]>) -> PyResult<f64> {
        coverage(&self.grid, &self.inner.q, &points).map_err(to_py)
    }

    fn contains(&self, point: [f64; 2]) -> bool {
        bqvc::contains(&self.grid, &self.inner.q, point)
    }
}

#[pyfunction(name = "build_envelope")]
fn py_build_envelope(grid: &PyDirectionGrid, q: Vec<f64>) -> PyResult<PyEnvelope> {
    Ok(PyEnvelope { grid: grid.inner.clone(), inner: build_envelope(&grid.inner, &q).map_err(to_py)? })
}

/// Initial and updated coefficient fields at one quantile level.
#[pyclass(name = "Fit", module = "bqvc_py", frozen)]
struct PyFit {
    basis: bqvc::SplineBasis,
    inner: MultistageFit,
}

impl PyFit {
    fn field(&self, estimate: &str) -> PyResult<&bqvc::CoefficientField> {
        match estimate {
            "initial" => Ok(&self.inner.initial),
            "updated" => Ok(&self.inner.updated),
            _ => Err(PyValueError::new_err(format!("unknown estimate `{estimate}` (initial | updated)"))),
        }
    }
}

#[pymethods]
impl PyFit {
    #[getter]
    fn tau(&self) -> f64 {
        self.inner.initial.tau
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn stages(&self) -> usize {
        self.inner.trace.len()
    }

    #[pyo3(signature = (estimate = "updated"))]
    fn coefficients(&self, estimate: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.field(estimate)?.coeffs))
    }

    #[pyo3(signature = (estimate = "updated"))]
    fn variances(&self, estimate: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.field(estimate)?.variances))
    }

    #[pyo3(signature = (estimate = "updated"))]
    fn frozen(&self, estimate: &str) -> PyResult<Vec<bool>> {
        Ok(self.field(estimate)?.frozen.clone())
    }

    /// Directional quantiles at covariates `x` (intercept included) and location `t`.
    #[pyo3(signature = (x, t, estimate = "updated"))]
    fn quantiles(&self, x: Vec<f64>, t: f64, estimate: &str) -> PyResult<Vec<f64>> {
        directional_quantiles(self.field(estimate)?, &self.basis, &x, t).map_err(to_py)
    }

    #[pyo3(signature = (x, t, estimate = "updated"))]
    fn envelope(&self, x: Vec<f64>, t: f64, estimate: &str) -> PyResult<PyEnvelope> {
        let field = self.field(estimate)?;
        let q = directional_quantiles(field, &self.basis, &x, t).map_err(to_py)?;
        Ok(PyEnvelope { grid: field.grid.clone(), inner: build_envelope(&field.grid, &q).map_err(to_py)? })
    }
}

/// Runs Stage I and the adaptive stages at one quantile level.
///
/// With `lambda_=None` the penalty weight is chosen by cross-validation.
#[pyfunction]
#[pyo3(signature = (data, basis, tau, directions = 100, lambda_ = None, cn = None, max_stages = 5, rho = 1.2))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    basis: &PySplineBasis,
    tau: f64,
    directions: usize,
    lambda_: Option<f64>,
    cn: Option<f64>,
    max_stages: usize,
    rho: f64,
) -> PyResult<PyFit> {
    let grid = bqvc::DirectionGrid::new(directions).map_err(to_py)?;
    let ps = PsOptions { lambda: lambda_, cn_override: cn, max_stages, ..Default::default() };
    let admm = AdmmOptions { rho, ..Default::default() };
    let inner = py.detach(|| fit_direction_field(&data.inner, &basis.inner, &grid, tau, &ps, &admm)).map_err(to_py)?;
    Ok(PyFit { basis: basis.inner.clone(), inner })
}

/// Penalized quantile regression by ADMM: `min Σρ_τ(y − Xb) + λ bᵀΩb`.
#[pyfunction]
#[pyo3(signature = (x, y, tau, lambda_, omega, rho = 1.2, eps_abs = 1e-4, eps_rel = 1e-2, max_iters = 5000))]
#[allow(clippy::too_many_arguments)]
fn solve_pqr(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    tau: f64,
    lambda_: f64,
    omega: Vec<Vec<f64>>,
    rho: f64,
    eps_abs: f64,
    eps_rel: f64,
    max_iters: usize,
) -> PyResult<(Vec<f64>, usize, bool, f64)> {
    let x = rows_to_matrix(&x)?;
    let omega = rows_to_matrix(&omega)?;
    let opts = AdmmOptions { rho, eps_abs, eps_rel, max_iters, ..Default::default() };
    let res = bqvc::solve_pqr(&x, &DVector::from_vec(y), tau, lambda_, &omega, &opts).map_err(to_py)?;
    Ok((res.b.iter().copied().collect(), res.iterations, res.converged, res.objective))
}

#[pyfunction]
fn check_loss(u: f64, tau: f64) -> PyResult<f64> {
    bqvc::check_loss(u, tau).map_err(to_py)
}

/// `argmin_r ρ_τ(r)·w + (ρ/2)(r − v)²`.
#[pyfunction]
fn check_prox(v: f64, tau: f64, rho: f64, w: f64) -> PyResult<f64> {
    bqvc::check_prox(v, tau, rho, w).map_err(to_py)
}

#[pyfunction]
fn curvature_of(vertices: Vec<[f64; 2]>) -> PyResult<f64> {
    let env = bqvc::Envelope { q: Vec::new(), empty: vertices.is_empty(), vertices, binding: Vec::new() };
    curvature(&env).map_err(to_py)
}

/// Closed-form envelope coverage for the spherical Gaussian (`"gaussian"`) or
/// bivariate t₃ (`"t3"`) errors.
#[pyfunction]
fn analytic_coverage(dist: &str, tau: f64) -> PyResult<f64> {
    let d = match dist {
        "gaussian" => AnalyticDist::Gaussian,
        "t3" => AnalyticDist::T3,
        _ => return Err(PyValueError::new_err(format!("unsupported distribution `{dist}` (gaussian | t3)"))),
    };
    analytic(d, tau).map_err(to_py)
}

#[pyfunction]
fn chi2_upper_quantile(df: usize, upper: f64) -> PyResult<f64> {
    bqvc::chi2_upper_quantile(df, upper).map_err(to_py)
}

#[pymodule]
fn bqvc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySplineBasis>()?;
    m.add_class::<PyDirectionGrid>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEnvelope>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pqr, m)?)?;
    m.add_function(wrap_pyfunction!(check_loss, m)?)?;
    m.add_function(wrap_pyfunction!(check_prox, m)?)?;
    m.add_function(wrap_pyfunction!(py_build_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(curvature_of, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_upper_quantile, m)?)?;
    Ok(())
}
