//! Python bindings for `specdeform`.

use num_complex::Complex64 as C64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use specdeform::commlab;
use specdeform::dispersion::{DispersionPair, DispersionSpec, FieldBounds};
use specdeform::flow::FlowOptions;
use specdeform::grid::MomentumGrid;
use specdeform::mourre::extract_constants;
use specdeform::operator::{self, FiberOperator, DEFAULT_TAIL_TOL};
use specdeform::potential::{
    certify_decay, construct_embedded, strip_sample, BumpProfile, FourierKernel, PositionGrid,
    PotentialSpec,
};
use specdeform::spectra::{eigendecompose, DEFAULT_EIG_TOL};
use specdeform::thresholds::threshold_set;

fn err(e: specdeform::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Grid", frozen)]
struct PyGrid(MomentumGrid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (cutoff, points, dim = 1))]
    fn new(cutoff: f64, points: usize, dim: usize) -> PyResult<Self> {
        MomentumGrid::new(cutoff, points, dim)
            .map(Self)
            .map_err(err)
    }

    fn axis(&self) -> Vec<f64> {
        self.0.axis()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }
}

fn family(name: &str, dim: usize, strip_radius: f64, lower: [f64; 2]) -> PyResult<DispersionSpec> {
    match name {
        "square" => Ok(DispersionSpec::square(dim, strip_radius)),
        "zero" => Ok(DispersionSpec::zero(dim, strip_radius)),
        "quartic" => Ok(DispersionSpec::quartic(dim, strip_radius, lower)),
        other => Err(PyValueError::new_err(format!("unknown family `{other}`"))),
    }
}

/// `ω_ξ(k) = ω₁(k) + ω₂(ξ - k)`.
#[pyclass(name = "Dispersion", frozen)]
struct PyDispersion(DispersionPair);

#[pymethods]
impl PyDispersion {
    #[new]
    #[pyo3(signature = (first, second, dim = 1, strip_radius = 0.5, lower = [0.0, 0.0]))]
    fn new(
        first: &str,
        second: &str,
        dim: usize,
        strip_radius: f64,
        lower: [f64; 2],
    ) -> PyResult<Self> {
        let a = family(first, dim, strip_radius, lower)?;
        let b = family(second, dim, strip_radius, lower)?;
        DispersionPair::new(a, b).map(Self).map_err(err)
    }

    fn omega(&self, xi: Vec<f64>, k: Vec<C64>) -> PyResult<C64> {
        self.0.omega_xi(&xi, &k).map_err(err)
    }

    fn gradient(&self, xi: Vec<f64>, k: Vec<C64>) -> PyResult<Vec<C64>> {
        self.0.gradient(&xi, &k).map_err(err)
    }

    /// Critical values of `ω_ξ`, seeded from `grid`.
    fn thresholds(&self, xi: Vec<f64>, grid: &PyGrid) -> PyResult<Vec<f64>> {
        threshold_set(&self.0, &xi, &grid.0)
            .map(|t| t.critical_values)
            .map_err(err)
    }

    #[pyo3(signature = (xi_box, strip_height = None, step = 0.02))]
    fn bounds(
        &self,
        xi_box: Vec<(f64, f64)>,
        strip_height: Option<f64>,
        step: f64,
    ) -> PyResult<PyBounds> {
        let h = strip_height.unwrap_or(self.0.strip_radius());
        self.0
            .certify_bounds(&xi_box, h, step)
            .map(PyBounds)
            .map_err(err)
    }
}

#[pyclass(name = "Bounds", frozen)]
struct PyBounds(FieldBounds);

#[pymethods]
impl PyBounds {
    #[getter]
    fn c_omega(&self) -> f64 {
        self.0.c_omega
    }

    #[getter]
    fn c_omega_prime(&self) -> f64 {
        self.0.c_omega_prime
    }
}

/// Certified Fourier transform of a pair potential.
#[pyclass(name = "Potential", frozen)]
struct PyPotential {
    kernel: FourierKernel,
    target: Option<f64>,
}

fn certified(spec: &PotentialSpec, a_prime: f64, seed: u64) -> PyResult<FourierKernel> {
    let sample = strip_sample(spec.dim, a_prime, 30.0, 400, seed);
    certify_decay(spec, a_prime, &sample).map_err(err)
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    #[pyo3(signature = (dim = 1))]
    fn zero(dim: usize) -> PyResult<Self> {
        let kernel = certify_decay(&PotentialSpec::zero(dim), 1.0, &[]).map_err(err)?;
        Ok(Self {
            kernel,
            target: None,
        })
    }

    /// `amplitude · e^{-width |x|²}`.
    #[staticmethod]
    #[pyo3(signature = (amplitude, width, dim = 1, a_prime = 1.0, seed = 3))]
    fn gaussian(amplitude: f64, width: f64, dim: usize, a_prime: f64, seed: u64) -> PyResult<Self> {
        let kernel = certified(
            &PotentialSpec::gaussian(dim, amplitude, width),
            a_prime,
            seed,
        )?;
        Ok(Self {
            kernel,
            target: None,
        })
    }

    /// Potential whose operator on the zero/quartic pair has `ξ₀²` as an eigenvalue at fiber 0.
    #[staticmethod]
    #[pyo3(signature = (xi0, a_prime = 1.0, seed = 3))]
    fn embedded(xi0: f64, a_prime: f64, seed: u64) -> PyResult<Self> {
        let e = construct_embedded(xi0, &BumpProfile::default(), &PositionGrid::default())
            .map_err(err)?;
        let kernel = certified(&e.potential_spec(e.default_stride(), 2.0), a_prime, seed)?;
        Ok(Self {
            kernel,
            target: Some(e.target_eigenvalue()),
        })
    }

    fn vhat(&self, k: Vec<C64>) -> PyResult<C64> {
        self.kernel.vhat(&k).map_err(err)
    }

    #[getter]
    fn c_v(&self) -> f64 {
        self.kernel.c_v
    }

    #[getter]
    fn target(&self) -> Option<f64> {
        self.target
    }
}

#[pyclass(name = "Operator", frozen)]
struct PyOperator(FiberOperator);

#[pymethods]
impl PyOperator {
    #[getter]
    fn size(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn theta(&self) -> C64 {
        self.0.theta
    }

    fn diagonal(&self) -> Vec<C64> {
        self.0.diagonal.clone()
    }

    /// Row-major nested lists.
    fn matrix(&self) -> Vec<Vec<C64>> {
        let m = &self.0.matrix;
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    #[pyo3(signature = (eig_tol = DEFAULT_EIG_TOL))]
    fn eigenvalues(&self, eig_tol: f64) -> PyResult<Vec<C64>> {
        eigendecompose(&self.0, eig_tol)
            .map(|r| r.eigenvalues)
            .map_err(err)
    }

    /// `‖H_θᴴ - H_θ̄‖_max / ‖H‖` against the operator at the conjugate angle.
    fn adjoint_defect(&self, conj: &PyOperator) -> PyResult<f64> {
        let r = operator::adjoint_identity(&self.0, &conj.0).map_err(err)?;
        Ok(r.defect / r.scale.max(f64::MIN_POSITIVE))
    }
}

/// `H_θ(ξ)` on `grid`; `θ = 0` gives the undeformed matrix.
#[pyfunction]
#[pyo3(signature = (grid, dispersion, potential, xi, theta, bounds, tail_tol = DEFAULT_TAIL_TOL))]
fn deformed_operator(
    grid: &PyGrid,
    dispersion: &PyDispersion,
    potential: &PyPotential,
    xi: Vec<f64>,
    theta: C64,
    bounds: &PyBounds,
    tail_tol: f64,
) -> PyResult<PyOperator> {
    operator::deformed_operator(
        &grid.0,
        &dispersion.0,
        &potential.kernel,
        &xi,
        theta,
        &bounds.0,
        &FlowOptions::default(),
        tail_tol,
    )
    .map(PyOperator)
    .map_err(err)
}

#[pyfunction]
fn admissible_radius(bounds: &PyBounds, potential: &PyPotential) -> f64 {
    operator::admissible_radius(&bounds.0, &potential.kernel)
}

/// Mourre constants at energy `lam` as a dict.
#[pyfunction]
#[pyo3(signature = (grid, dispersion, potential, lam, xi, known = vec![]))]
fn mourre_constants<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    dispersion: &PyDispersion,
    potential: &PyPotential,
    lam: f64,
    xi: Vec<f64>,
    known: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let t = threshold_set(&dispersion.0, &xi, &grid.0).map_err(err)?;
    let r = extract_constants(
        &grid.0,
        &dispersion.0,
        &potential.kernel,
        lam,
        &xi,
        &t,
        &known,
    )
    .map_err(err)?;
    to_py(py, &r)
}

/// Conjugation-series checks on seeded random matrix pairs, as a dict.
#[pyfunction]
#[pyo3(signature = (seeds, n = 40, k_max = 60, fraction = 0.9))]
fn commlab_batch<'py>(
    py: Python<'py>,
    seeds: Vec<u64>,
    n: usize,
    k_max: usize,
    fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = commlab::batch(&seeds, n, k_max, fraction).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn pyspecdeform(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyDispersion>()?;
    m.add_class::<PyBounds>()?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(deformed_operator, m)?)?;
    m.add_function(wrap_pyfunction!(admissible_radius, m)?)?;
    m.add_function(wrap_pyfunction!(mourre_constants, m)?)?;
    m.add_function(wrap_pyfunction!(commlab_batch, m)?)?;
    Ok(())
}
