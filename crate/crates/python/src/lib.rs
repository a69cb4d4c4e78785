//! Python bindings: configuration, spectral and Monte Carlo runs, snapshots
//! and moment comparison.

use std::path::PathBuf;
use std::sync::OnceLock;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use liefp::cli::{self, config::RunConfig, snapshot};
use liefp::harmonic::HarmonicWorkspace;
use liefp::pendulum::Pendulum;
use liefp::stats::{self, MomentSummary};
use liefp::Error;

create_exception!(liefp, ConfigError, PyValueError, "Invalid or unreadable run configuration.");
create_exception!(liefp, NumericalError, PyArithmeticError, "A run failed numerically.");

fn to_py(e: Error) -> PyErr {
    match cli::exit_code(&e) {
        cli::EXIT_CONFIG => ConfigError::new_err(e.to_string()),
        cli::EXIT_NUMERICAL => NumericalError::new_err(e.to_string()),
        _ => match e {
            Error::Io(io) => PyIOError::new_err(io.to_string()),
            other => PyValueError::new_err(other.to_string()),
        },
    }
}

/// Run configuration with the shipped defaults.
#[pyclass(name = "RunConfig", module = "liefp", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    /// Loads a TOML file and applies `LIEFP_*` environment overrides.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    /// Parses TOML text over the defaults, without environment overrides.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml_with_env(text, std::iter::empty()).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }
    #[setter]
    fn set_dt(&mut self, v: f64) {
        self.inner.dt = v;
    }
    #[getter]
    fn t_final(&self) -> f64 {
        self.inner.t_final
    }
    #[setter]
    fn set_t_final(&mut self, v: f64) {
        self.inner.t_final = v;
    }
    #[getter]
    fn snapshot_stride(&self) -> usize {
        self.inner.snapshot_stride
    }
    #[setter]
    fn set_snapshot_stride(&mut self, v: usize) {
        self.inner.snapshot_stride = v;
    }
    #[getter]
    fn l0(&self) -> usize {
        self.inner.band.l0
    }
    #[setter]
    fn set_l0(&mut self, v: usize) {
        self.inner.band.l0 = v;
    }
    #[getter]
    fn n0(&self) -> usize {
        self.inner.band.n0
    }
    #[setter]
    fn set_n0(&mut self, v: usize) {
        self.inner.band.n0 = v;
    }
    #[getter]
    fn collisions(&self) -> bool {
        self.inner.collisions
    }
    #[setter]
    fn set_collisions(&mut self, v: bool) {
        self.inner.collisions = v;
    }
    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.mc.n_samples
    }
    #[setter]
    fn set_n_samples(&mut self, v: usize) {
        self.inner.mc.n_samples = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.mc.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.mc.seed = v;
    }
    #[getter]
    fn mc_substeps(&self) -> usize {
        self.inner.mc.substeps
    }
    #[setter]
    fn set_mc_substeps(&mut self, v: usize) {
        self.inner.mc.substeps = v;
    }
    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }
    #[setter]
    fn set_output_dir(&mut self, v: PathBuf) {
        self.inner.output_dir = v;
    }
    #[getter]
    fn write_snapshots(&self) -> bool {
        self.inner.write_snapshots
    }
    #[setter]
    fn set_write_snapshots(&mut self, v: bool) {
        self.inner.write_snapshots = v;
    }

    /// Contact angle of the pendulum with the wall (rad).
    fn contact_angle(&self) -> PyResult<f64> {
        let p = Pendulum::new(self.inner.pendulum.clone(), self.inner.collisions).map_err(to_py)?;
        Ok(p.theta0())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(l0={}, n0={}, dt={}, t_final={}, collisions={})",
            self.inner.band.l0, self.inner.band.n0, self.inner.dt, self.inner.t_final, self.inner.collisions
        )
    }
}

/// Moments at one time.
#[pyclass(name = "Moments", module = "liefp", frozen, from_py_object)]
#[derive(Clone)]
struct PyMoments {
    inner: MomentSummary,
}

#[pymethods]
impl PyMoments {
    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }
    /// Mean attitude as a row-major 3x3 nested list.
    #[getter]
    fn mean_r(&self) -> Vec<Vec<f64>> {
        let r = &self.inner.mean_r;
        (0..3).map(|i| (0..3).map(|j| r[(i, j)]).collect()).collect()
    }
    #[getter]
    fn mean_b3(&self) -> [f64; 3] {
        [self.inner.mean_b3[0], self.inner.mean_b3[1], self.inner.mean_b3[2]]
    }
    #[getter]
    fn att_dispersion(&self) -> [f64; 2] {
        self.inner.att_dispersion
    }
    #[getter]
    fn mean_omega(&self) -> [f64; 2] {
        self.inner.mean_omega
    }
    #[getter]
    fn std_omega(&self) -> [f64; 2] {
        self.inner.std_omega
    }
    #[getter]
    fn ill_conditioned(&self) -> bool {
        self.inner.ill_conditioned
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!(
            "Moments(t={}, mean_b3={:?}, mean_omega={:?}, std_omega={:?})",
            m.t,
            self.mean_b3(),
            m.mean_omega,
            m.std_omega
        )
    }
}

fn wrap(ms: Vec<MomentSummary>) -> Vec<PyMoments> {
    ms.into_iter().map(|inner| PyMoments { inner }).collect()
}

/// `(alpha, beta, values)` of the b3 marginal.
type B3Marginal = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// A density snapshot with its grid.
#[pyclass(name = "Snapshot", module = "liefp", frozen)]
struct PySnapshot {
    inner: snapshot::Snapshot,
    ws: OnceLock<HarmonicWorkspace>,
}

impl PySnapshot {
    fn workspace(&self) -> PyResult<&HarmonicWorkspace> {
        if let Some(ws) = self.ws.get() {
            return Ok(ws);
        }
        let ws = HarmonicWorkspace::build(self.inner.density.band()).map_err(to_py)?;
        Ok(self.ws.get_or_init(|| ws))
    }
}

#[pymethods]
impl PySnapshot {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: snapshot::load_snapshot(&path).map_err(to_py)?,
            ws: OnceLock::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        snapshot::save_snapshot(&path, self.inner.t, &self.inner.density).map_err(to_py)
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    /// `(l0, n0, L, N_s)`.
    #[getter]
    fn shape(&self) -> (usize, usize, f64, usize) {
        let b = self.inner.density.band();
        (b.l0(), b.n0(), b.half_width(), self.inner.density.n_modes())
    }

    /// Flat density values in `(s, nu1, nu2, nu3, mu1, mu2)` row-major order.
    fn values(&self) -> Vec<f64> {
        self.inner.density.as_slice().to_vec()
    }

    fn total_probability(&self) -> PyResult<f64> {
        Ok(self.inner.density.total_probability(self.workspace()?))
    }

    fn moments(&self) -> PyResult<PyMoments> {
        let inner = stats::density_moments(&self.inner.density, self.workspace()?, self.inner.t);
        Ok(PyMoments { inner })
    }

    /// `(alpha, beta, values)` with `values[i][j]` at `(alpha[i], beta[j])`.
    fn b3_marginal(&self) -> PyResult<B3Marginal> {
        let m = stats::marginals(&self.inner.density, self.workspace()?);
        let n = m.beta.len();
        let rows = m.b3.chunks(n).map(<[f64]>::to_vec).collect();
        Ok((m.alpha, m.beta, rows))
    }

    /// `(axis, values)` with `values[i][j]` at `(axis[i], axis[j])`.
    fn omega_marginal(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let m = stats::marginals(&self.inner.density, self.workspace()?);
        let n = m.omega_axis.len();
        let rows = m.omega.chunks(n).map(<[f64]>::to_vec).collect();
        Ok((m.omega_axis, rows))
    }
}

/// Spectral run writing the standard outputs to `config.output_dir`;
/// returns the moments at every snapshot.
#[pyfunction]
fn propagate(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<PyMoments>> {
    let report = py.detach(|| cli::cmd_propagate(&config.inner)).map_err(to_py)?;
    Ok(wrap(report.moments))
}

/// Monte Carlo ensemble on the spectral time grid; writes `mc_moments.csv`.
#[pyfunction]
fn montecarlo(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<PyMoments>> {
    Ok(wrap(py.detach(|| cli::cmd_montecarlo(&config.inner)).map_err(to_py)?))
}

/// Per-snapshot differences `a - b` as dictionaries (angles in radians).
#[pyfunction]
fn compare<'py>(py: Python<'py>, a: Vec<PyMoments>, b: Vec<PyMoments>) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let unwrap = |v: Vec<PyMoments>| v.into_iter().map(|m| m.inner).collect::<Vec<_>>();
    let diffs = stats::compare(&unwrap(a), &unwrap(b)).map_err(to_py)?;
    diffs
        .iter()
        .map(|d| {
            let dict = pyo3::types::PyDict::new(py);
            dict.set_item("t", d.t)?;
            dict.set_item("attitude_angle", d.attitude_angle)?;
            dict.set_item("b3_angle", d.b3_angle)?;
            dict.set_item("att_dispersion", d.att_dispersion)?;
            dict.set_item("mean_omega", d.mean_omega)?;
            dict.set_item("std_omega", d.std_omega)?;
            Ok(dict)
        })
        .collect()
}

/// Reads a moment table written by `propagate` or `montecarlo`.
#[pyfunction]
fn read_moments(path: PathBuf) -> PyResult<Vec<PyMoments>> {
    let file = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    Ok(wrap(cli::export::read_moments(std::io::BufReader::new(file)).map_err(to_py)?))
}

#[pymodule]
#[pyo3(name = "liefp")]
fn liefp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyMoments>()?;
    m.add_class::<PySnapshot>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(montecarlo, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(read_moments, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
