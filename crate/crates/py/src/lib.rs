//! Python bindings for the tilebound core crate.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tilebound::bounds::{self, AlphaTarget, BoundOptions, BoundSurface, Evaluation, SurfaceMeta};
use tilebound::config::BuiltDesign;
use tilebound::designs::{ParallelGaussianDesign, ThompsonDesign, TrialDesign};
use tilebound::domain::{self, Region};
use tilebound::engine::{simulate_grid, SeedPolicy, SimOptions};
use tilebound::expfam::CanonicalFamily;
use tilebound::surface_io::surface_to_csv;
use tilebound::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Internal(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A canonical exponential family.
#[pyclass(frozen)]
struct Family(CanonicalFamily);

#[pymethods]
impl Family {
    #[staticmethod]
    fn bernoulli() -> Self {
        Family(CanonicalFamily::Bernoulli)
    }

    #[staticmethod]
    fn gaussian(sigma: f64) -> PyResult<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PyValueError::new_err("sigma must be positive"));
        }
        Ok(Family(CanonicalFamily::Gaussian { sigma }))
    }

    #[staticmethod]
    fn gaussian_unknown_variance() -> Self {
        Family(CanonicalFamily::GaussianUnknownVariance)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn log_partition(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.0.log_partition(&theta).map_err(py_err)
    }

    fn grad(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.grad_a(&theta).map_err(py_err)?.to_vec())
    }

    fn hess(&self, theta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.0.hess_a(&theta).map_err(py_err)?))
    }

    /// Matrix dominating the Hessian over the box [lo, hi].
    fn hess_tile_max(&self, lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.0.hess_a_tile_max(&lo, &hi).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("Family({:?})", self.0)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A simulable trial design.
#[pyclass(frozen)]
struct Design(BuiltDesign);

#[pymethods]
impl Design {
    #[staticmethod]
    #[pyo3(signature = (n_arms=2, n_per_arm=10, sigma=1.0, mu0=0.0, alpha=0.025))]
    fn parallel_gaussian(n_arms: usize, n_per_arm: u64, sigma: f64, mu0: f64, alpha: f64) -> PyResult<Self> {
        let d = ParallelGaussianDesign::new(n_arms, n_per_arm, sigma, mu0, alpha).map_err(py_err)?;
        Ok(Design(BuiltDesign::Gaussian(d)))
    }

    #[staticmethod]
    #[pyo3(signature = (n_arms=2, n_patients=100, p0=0.6, threshold=0.95))]
    fn thompson(n_arms: usize, n_patients: u64, p0: f64, threshold: f64) -> PyResult<Self> {
        let d = ThompsonDesign::new(n_arms, n_patients, p0, threshold).map_err(py_err)?;
        Ok(Design(BuiltDesign::Thompson(d)))
    }

    #[getter]
    fn id(&self) -> &'static str {
        self.0.as_dyn().id()
    }

    /// Exact Type I Error at `theta` (parallel Gaussian design only).
    #[pyo3(signature = (theta, lambda_=0.0))]
    fn exact_type_one_error(&self, theta: Vec<f64>, lambda_: f64) -> PyResult<f64> {
        match &self.0 {
            BuiltDesign::Gaussian(d) => {
                d.spec().check_domain(&theta).map_err(py_err)?;
                let null = domain::null_mask_at(&d.default_hypotheses(), &theta);
                Ok(d.exact_type_one_error(&theta, null, lambda_))
            }
            BuiltDesign::Thompson(_) => Err(PyValueError::new_err("no closed form for the Thompson design")),
        }
    }
}

fn tuned(design: &BuiltDesign, lambda: f64) -> BuiltDesign {
    match design {
        BuiltDesign::Gaussian(d) => BuiltDesign::Gaussian(d.clone().with_tuning(lambda)),
        BuiltDesign::Thompson(d) => BuiltDesign::Thompson(d.clone().with_tuning(lambda)),
    }
}

/// Rectangular tiling of a region, split along the design's null cutoffs.
#[pyclass(frozen)]
struct Grid(domain::Grid);

#[pymethods]
impl Grid {
    #[new]
    fn new(design: &Design, lower: Vec<f64>, upper: Vec<f64>, steps: Vec<usize>) -> PyResult<Self> {
        let region = Region::new(lower, upper).map_err(py_err)?;
        let hyps = design.0.as_dyn().default_hypotheses();
        Ok(Grid(domain::build_grid(region, &steps, &hyps).map_err(py_err)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Number of tiles on which at least one hypothesis is null.
    fn n_null_tiles(&self) -> usize {
        self.0.null_tiles().count()
    }

    /// (index, center, half_widths, null signature bit string).
    fn tile(&self, index: usize) -> PyResult<(u64, Vec<f64>, Vec<f64>, String)> {
        if index >= self.0.len() {
            return Err(PyValueError::new_err(format!("tile {index} out of range")));
        }
        let t = self.0.tile(index);
        Ok((
            t.index,
            t.center.clone(),
            t.half_widths.clone(),
            t.null_signature.to_bit_string(self.0.n_hypotheses()),
        ))
    }

    fn tiles_containing(&self, theta: Vec<f64>) -> Vec<usize> {
        self.0.tiles_containing(&theta)
    }

    fn __repr__(&self) -> String {
        format!("Grid({})", self.0.describe())
    }
}

/// Tile-wise upper bound on the Type I Error.
#[pyclass(frozen)]
struct Surface(BoundSurface);

#[pymethods]
impl Surface {
    #[getter]
    fn lambda_(&self) -> f64 {
        self.0.meta.lambda
    }

    #[getter]
    fn confidence(&self) -> f64 {
        self.0.confidence()
    }

    /// Bound at `theta`; None on pure-alternative tiles.
    fn evaluate(&self, theta: Vec<f64>) -> PyResult<Option<f64>> {
        match self.0.evaluate(&theta) {
            Evaluation::Bound(g) => Ok(Some(g)),
            Evaluation::NotApplicable => Ok(None),
            Evaluation::Outside => Err(PyValueError::new_err("point outside the tiled region")),
        }
    }

    /// (tile index, value) of the largest bound.
    fn max_value(&self) -> Option<(u64, f64)> {
        self.0.max_value()
    }

    /// One tuple per bounded tile:
    /// (index, n_sims, false_rej, delta_I, delta_II, delta_III, total).
    fn rows(&self) -> Vec<(u64, u64, u64, f64, f64, f64, f64)> {
        self.0
            .rows()
            .map(|(_, b)| (b.tile_index, b.n_sims, b.false_rej, b.delta_i, b.delta_ii, b.delta_iii, b.total))
            .collect()
    }

    fn to_csv(&self) -> String {
        surface_to_csv(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.rows().count()
    }
}

fn meta(design: &BuiltDesign, grid: &domain::Grid, seed: u64, delta: f64, lambda: f64) -> SurfaceMeta {
    SurfaceMeta {
        design_id: design.as_dyn().id().to_string(),
        master_seed: seed,
        grid: grid.describe(),
        delta,
        lambda,
    }
}

/// Simulate every null tile and assemble the upper bound surface.
#[pyfunction]
#[pyo3(signature = (design, grid, n_sims, seed, delta=0.01, lambda_=0.0))]
fn verify(
    py: Python<'_>,
    design: &Design,
    grid: &Grid,
    n_sims: u64,
    seed: u64,
    delta: f64,
    lambda_: f64,
) -> PyResult<Surface> {
    let d = tuned(&design.0, lambda_);
    let g = &grid.0;
    py.detach(|| {
        let sums = simulate_grid(d.as_dyn(), g, n_sims, &SeedPolicy::new(seed), SimOptions::default(), None, &[])?;
        bounds::assemble_surface(d.as_dyn(), g, &sums, delta, &BoundOptions::default(), meta(&d, g, seed, delta, lambda_))
    })
    .map(Surface)
    .map_err(py_err)
}

/// Largest safe λ on `ladder`. Returns (lambda_prime, failed, surface).
#[pyfunction]
#[pyo3(signature = (design, grid, n_sims, seed, ladder, alpha, delta=0.01))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    design: &Design,
    grid: &Grid,
    n_sims: u64,
    seed: u64,
    ladder: Vec<f64>,
    alpha: f64,
    delta: f64,
) -> PyResult<(f64, bool, Surface)> {
    let d = &design.0;
    let g = &grid.0;
    let cal = py
        .detach(|| {
            bounds::calibrate(
                d.as_dyn(),
                g,
                n_sims,
                &SeedPolicy::new(seed),
                &ladder,
                &AlphaTarget::Constant(alpha),
                delta,
                &BoundOptions::default(),
                meta(d, g, seed, delta, 0.0),
            )
        })
        .map_err(py_err)?;
    Ok((cal.lambda_prime, cal.failed, Surface(cal.surface)))
}

/// Clopper-Pearson upper limit for k events in n trials.
#[pyfunction]
fn clopper_pearson_upper(k: u64, n: u64, tail: f64) -> PyResult<f64> {
    bounds::clopper_pearson_upper(k, n, tail).map_err(py_err)
}

/// Cantelli deviation width sqrt(vᵀHv / n · (1/budget − 1)).
#[pyfunction]
fn cantelli_width(v: Vec<f64>, hess: Vec<Vec<f64>>, n_sims: u64, budget: f64) -> PyResult<f64> {
    let d = v.len();
    if hess.len() != d || hess.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("hess must be a square matrix matching v"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| hess[i][j]);
    bounds::check_psd(&m).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(bounds::cantelli_width(&v, &m, n_sims, budget))
}

#[pymodule]
fn tilebound_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Family>()?;
    m.add_class::<Design>()?;
    m.add_class::<Grid>()?;
    m.add_class::<Surface>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(clopper_pearson_upper, m)?)?;
    m.add_function(wrap_pyfunction!(cantelli_width, m)?)?;
    Ok(())
}
