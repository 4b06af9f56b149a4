//! Python bindings for the semiscat engine: model construction, Hamiltonian
//! flow, scattering data, the leading-order semiclassical amplitude, and the
//! quantum validators.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyComplex, PyDict, PyList};

use semiscat::amplitude::{semiclassical_leading_amplitude, BranchSearch};
use semiscat::assumptions::{linearization, validate_assumptions};
use semiscat::flow::{flow_trajectory, FlowOpts, PhasePoint};
use semiscat::manifold::{sample_manifold, ManifoldSide};
use semiscat::potential::{ModelConfig, PotentialModel};
use semiscat::quantum::numerov::numerov_scattering_1d;
use semiscat::quantum::partialwave::partial_wave_amplitude;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn config_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vecd(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn opts_scaled(tol_scale: f64) -> FlowOpts {
    let mut opts = FlowOpts::default();
    opts.abs_tol *= tol_scale;
    opts.rel_tol *= tol_scale;
    opts.energy_drift_tol *= tol_scale;
    opts.symplectic_tol *= tol_scale;
    opts
}

/// A barrier potential model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: PotentialModel,
}

#[pymethods]
impl PyModel {
    /// Model(family, n, e0, lambda, rho=None)
    #[new]
    #[pyo3(signature = (family, n, e0, lambda, rho=None))]
    fn new(family: &str, n: usize, e0: f64, lambda: Vec<f64>, rho: Option<f64>) -> PyResult<Self> {
        let cfg = ModelConfig {
            schema_version: 1,
            family: family.to_string(),
            n,
            e0,
            lambda,
            rho,
            params: serde_json::Map::new(),
        };
        Ok(PyModel {
            inner: cfg.build().map_err(config_err)?,
        })
    }

    /// Build a model from the JSON config schema used by the CLI.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = ModelConfig::from_json(text).map_err(config_err)?;
        Ok(PyModel {
            inner: cfg.build().map_err(config_err)?,
        })
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn barrier_energy(&self) -> f64 {
        self.inner.barrier_energy()
    }

    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas()
    }

    fn length_scale(&self) -> f64 {
        self.inner.length_scale()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.dimension() {
            return Err(config_err("x has the wrong dimension"));
        }
        Ok(self.inner.value(&vecd(&x)))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.dimension() {
            return Err(config_err("x has the wrong dimension"));
        }
        Ok(self.inner.gradient(&vecd(&x)).as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n={}, E0={}, lambdas={:?})",
            self.inner.dimension(),
            self.inner.barrier_energy(),
            self.inner.lambdas()
        )
    }
}

/// Integrate the Hamiltonian flow for time `t`; returns a dict with the
/// final point and integrator diagnostics.
#[pyfunction]
#[pyo3(signature = (model, x, xi, t, tol_scale=1.0))]
fn flow<'py>(
    py: Python<'py>,
    model: &PyModel,
    x: Vec<f64>,
    xi: Vec<f64>,
    t: f64,
    tol_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p0 = PhasePoint::from_slices(&x, &xi);
    let opts = opts_scaled(tol_scale);
    let traj = flow_trajectory(&model.inner, &p0, t, true, &opts).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("x", traj.end().x.as_slice().to_vec())?;
    out.set_item("xi", traj.end().xi.as_slice().to_vec())?;
    out.set_item("energy", traj.energy)?;
    out.set_item("max_energy_drift", traj.max_energy_drift(&model.inner))?;
    out.set_item("max_symplectic_defect", traj.max_symplectic_defect())?;
    out.set_item("steps", traj.meta.steps)?;
    Ok(out)
}

/// Scattering data for the incoming asymptote `(omega, z)` at energy `e`:
/// outgoing direction `theta` and impact `z_plus`.
#[pyfunction]
#[pyo3(signature = (model, energy, omega, z, tol_scale=1.0))]
fn scatter<'py>(
    py: Python<'py>,
    model: &PyModel,
    energy: f64,
    omega: Vec<f64>,
    z: Vec<f64>,
    tol_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = opts_scaled(tol_scale);
    let omega = vecd(&omega).normalize();
    let traj =
        semiscat::amplitude::omega_trajectory(&model.inner, energy, &omega, &vecd(&z), &opts)
            .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("theta", traj.outgoing.theta().as_slice().to_vec())?;
    out.set_item("z_plus", traj.outgoing.impact().as_slice().to_vec())?;
    out.set_item("omega", omega.as_slice().to_vec())?;
    Ok(out)
}

/// Leading-order semiclassical amplitude at `(omega, theta, energy, h)`.
/// Returns a dict with the complex amplitude and the per-branch data
/// (impact point, regularity determinant, modified action, Maslov index).
#[pyfunction]
#[pyo3(signature = (model, omega, theta, energy, h, r_impact=4.0, tol_scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn amplitude<'py>(
    py: Python<'py>,
    model: &PyModel,
    omega: Vec<f64>,
    theta: Vec<f64>,
    energy: f64,
    h: f64,
    r_impact: f64,
    tol_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = opts_scaled(tol_scale);
    let omega = vecd(&omega).normalize();
    let theta = vecd(&theta).normalize();
    let result = semiclassical_leading_amplitude(
        &model.inner,
        &omega,
        &theta,
        energy,
        h,
        &BranchSearch::new(r_impact),
        &opts,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    let a = result.amplitude;
    out.set_item("amplitude", PyComplex::from_doubles(py, a.re, a.im))?;
    out.set_item("energy", energy)?;
    out.set_item("h", h)?;
    let branches = PyList::empty(py);
    for b in &result.branches {
        let d = PyDict::new(py);
        d.set_item("z", b.z.as_slice().to_vec())?;
        d.set_item("sigma_hat", b.sigma_hat)?;
        d.set_item("action", b.action)?;
        d.set_item("maslov", b.maslov)?;
        branches.append(d)?;
    }
    out.set_item("branches", branches)?;
    Ok(out)
}

/// Critical-order exponents `(resolvent, scattering)` of the model.
#[pyfunction]
fn critical_exponents(model: &PyModel) -> PyResult<(f64, f64)> {
    let data = semiscat::amplitude::critical_order_exponents(&model.inner).map_err(err)?;
    Ok((data.resolvent_order, data.scattering_order))
}

/// 1D transmission probability `|T|^2` at energy `e`.
#[pyfunction]
fn transmission_1d(model: &PyModel, energy: f64, h: f64) -> PyResult<f64> {
    let sc = numerov_scattering_1d(&model.inner, energy, h).map_err(err)?;
    Ok(sc.transmission.norm_sqr())
}

/// 2D partial-wave amplitudes `f(theta)` (complex) at the given angles.
#[pyfunction]
fn partial_waves<'py>(
    py: Python<'py>,
    model: &PyModel,
    energy: f64,
    h: f64,
    thetas: Vec<f64>,
) -> PyResult<Bound<'py, PyList>> {
    let qw = partial_wave_amplitude(&model.inner, energy, h, &thetas).map_err(err)?;
    let out = PyList::empty(py);
    for f in &qw.amplitudes {
        out.append(PyComplex::from_doubles(py, f.re, f.im))?;
    }
    Ok(out)
}

/// Sample points of the stable ("stable") or unstable ("unstable")
/// manifold: a list of `(x, xi)` pairs.
#[pyfunction]
#[pyo3(signature = (model, side, directions, radii, tol_scale=1.0))]
fn manifold_points(
    model: &PyModel,
    side: &str,
    directions: usize,
    radii: Vec<f64>,
    tol_scale: f64,
) -> PyResult<Vec<(Vec<f64>, Vec<f64>)>> {
    let side = match side {
        "unstable" | "plus" => ManifoldSide::Unstable,
        "stable" | "minus" => ManifoldSide::Stable,
        other => {
            return Err(config_err(format!(
                "side must be \"unstable\" or \"stable\", got {other:?}"
            )))
        }
    };
    let opts = opts_scaled(tol_scale);
    let lin = linearization(&model.inner).map_err(err)?;
    let patch = sample_manifold(&model.inner, &lin, side, directions, &radii, &opts)
        .map_err(err)?;
    Ok(patch
        .points
        .iter()
        .map(|mp| {
            (
                mp.point.x.as_slice().to_vec(),
                mp.point.xi.as_slice().to_vec(),
            )
        })
        .collect())
}

/// Run the assumption battery; returns a dict report.
#[pyfunction]
#[pyo3(signature = (model, probes=64))]
fn validate<'py>(py: Python<'py>, model: &PyModel, probes: usize) -> PyResult<Bound<'py, PyDict>> {
    let report =
        validate_assumptions(&model.inner, probes, &FlowOpts::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("lambdas", report.lambdas.clone())?;
    out.set_item("unique_maximum", report.unique_maximum)?;
    out.set_item("short_range", report.short_range)?;
    out.set_item("trapped_set_trivial", report.trapped_set_trivial)?;
    out.set_item("probes", report.probes)?;
    out.set_item("undecided", report.undecided)?;
    out.set_item("all_ok", report.all_ok())?;
    Ok(out)
}

#[pymodule]
fn semiscat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(scatter, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude, m)?)?;
    m.add_function(wrap_pyfunction!(critical_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_1d, m)?)?;
    m.add_function(wrap_pyfunction!(partial_waves, m)?)?;
    m.add_function(wrap_pyfunction!(manifold_points, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
