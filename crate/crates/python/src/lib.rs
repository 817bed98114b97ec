//! Python bindings. Matrices cross the boundary as lists of rows of complex numbers.

use gevd_mimo::channel;
use gevd_mimo::cli;
use gevd_mimo::config::{EstimatorKind, ExperimentConfig};
use gevd_mimo::covest;
use gevd_mimo::estimators;
use gevd_mimo::harness::{self, NmseResult};
use gevd_mimo::linalg::{self, CMatrix, CVector, HermitianMatrix};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Rows = Vec<Vec<Complex64>>;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Rows) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_hermitian(rows: Rows) -> PyResult<HermitianMatrix> {
    HermitianMatrix::symmetrize(to_matrix(rows)?).map_err(value_err)
}

fn to_rows(m: &CMatrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Generalized eigen-decomposition of the Hermitian pencil `(a, b)`, `b` positive definite.
///
/// Returns `(eigenvalues, x, q)` with eigenvalues descending, `xᴴ·b·x = I`,
/// `a = q·diag(σ)·qᴴ` and `b = q·qᴴ`.
#[pyfunction]
fn gevd(a: Rows, b: Rows) -> PyResult<(Vec<f64>, Rows, Rows)> {
    let r = linalg::gevd(&to_hermitian(a)?, &to_hermitian(b)?).map_err(value_err)?;
    Ok((r.eigenvalues, to_rows(&r.x), to_rows(&r.q)))
}

/// Local-scattering covariance of an `n`-antenna half-wavelength ULA (angles in radians).
#[pyfunction]
#[pyo3(signature = (n, nominal_angle, half_spread, gain = 1.0))]
fn local_scattering_covariance(
    n: usize,
    nominal_angle: f64,
    half_spread: f64,
    gain: f64,
) -> PyResult<Rows> {
    let r = channel::local_scattering_covariance(n, nominal_angle, half_spread, gain)
        .map_err(value_err)?;
    Ok(to_rows(r.as_matrix()))
}

/// Number of eigenvalues above `threshold` times the largest.
#[pyfunction]
#[pyo3(signature = (matrix, threshold = 0.01))]
fn dominant_eigenvalue_count(matrix: Rows, threshold: f64) -> PyResult<usize> {
    channel::dominant_eigenvalue_count(&to_hermitian(matrix)?, threshold).map_err(value_err)
}

/// `(pilot_cov − all_cov)/((τp−1)·p)`
#[pyfunction]
fn subtraction_estimator(
    pilot_cov: Rows,
    all_cov: Rows,
    tau_p: usize,
    power: f64,
) -> PyResult<Rows> {
    let r = covest::subtraction_estimator(
        &to_hermitian(pilot_cov)?,
        &to_hermitian(all_cov)?,
        tau_p,
        power,
    )
    .map_err(value_err)?;
    Ok(to_rows(r.as_matrix()))
}

#[pyclass(name = "LowRankCovEstimate", frozen)]
struct PyLowRank {
    inner: covest::LowRankCovEstimate,
}

#[pymethods]
impl PyLowRank {
    #[getter]
    fn rank_requested(&self) -> usize {
        self.inner.rank_requested
    }

    #[getter]
    fn rank_effective(&self) -> usize {
        self.inner.rank_effective
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma_r.clone()
    }

    #[getter]
    fn lambda_(&self) -> Vec<f64> {
        self.inner.lambda_r.clone()
    }

    /// `p·R̂`
    #[getter]
    fn scaled_matrix(&self) -> Rows {
        to_rows(self.inner.scaled_matrix.as_matrix())
    }

    /// `R̂` for transmit power `power`.
    fn covariance(&self, power: f64) -> Rows {
        to_rows(self.inner.covariance(power).as_matrix())
    }

    /// Approximate MMSE channel estimate from a despread pilot vector.
    fn estimate(&self, y_pilot: Vec<Complex64>, power: f64) -> PyResult<Vec<Complex64>> {
        if y_pilot.len() != self.inner.dim() {
            return Err(PyValueError::new_err(
                "y_pilot length differs from the antenna count",
            ));
        }
        let y = CVector::from_vec(y_pilot);
        Ok(estimators::approx_mmse_estimate(&self.inner, power, &y)
            .h_hat
            .iter()
            .copied()
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "LowRankCovEstimate(dim={}, rank_requested={}, rank_effective={})",
            self.inner.dim(),
            self.inner.rank_requested,
            self.inner.rank_effective
        )
    }
}

/// Rank-`rank` GEVD estimate of `p·R̄` from the pencil `(pilot_cov, all_cov)`.
#[pyfunction]
fn gevd_lowrank(pilot_cov: Rows, all_cov: Rows, tau_p: usize, rank: usize) -> PyResult<PyLowRank> {
    let inner = covest::gevd_lowrank_estimator(
        &to_hermitian(pilot_cov)?,
        &to_hermitian(all_cov)?,
        tau_p,
        rank,
    )
    .map_err(value_err)?;
    Ok(PyLowRank { inner })
}

#[pyclass(name = "NmseResult", frozen, get_all)]
struct PyNmseResult {
    estimator: String,
    sweep_variable: String,
    sweep_value: usize,
    nmse: f64,
    nmse_db: f64,
    runs: usize,
    fallbacks: usize,
}

impl From<&NmseResult> for PyNmseResult {
    fn from(r: &NmseResult) -> Self {
        Self {
            estimator: r.estimator.clone(),
            sweep_variable: r.sweep_variable.name().to_string(),
            sweep_value: r.sweep_value,
            nmse: r.nmse,
            nmse_db: r.nmse_db,
            runs: r.runs_aggregated,
            fallbacks: r.fallback_count,
        }
    }
}

#[pymethods]
impl PyNmseResult {
    fn __repr__(&self) -> String {
        format!(
            "NmseResult({}, {}={}, {:.2} dB)",
            self.estimator, self.sweep_variable, self.sweep_value, self.nmse_db
        )
    }
}

/// A validated experiment description.
#[pyclass(name = "ExperimentConfig")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Desk profile (or the 100-antenna profile), then `toml` text, then `overrides`.
    #[new]
    #[pyo3(signature = (toml = None, overrides = Vec::new(), paper_scale = false))]
    fn new(toml: Option<&str>, overrides: Vec<String>, paper_scale: bool) -> PyResult<Self> {
        let base = if paper_scale {
            ExperimentConfig::paper_scale()
        } else {
            ExperimentConfig::default()
        };
        let inner = cli::resolve_config(base, toml, &overrides, None).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.system.antennas
    }

    #[getter]
    fn tau_p(&self) -> usize {
        self.inner.system.tau_p
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.system.seed
    }

    #[getter]
    fn estimators(&self) -> Vec<String> {
        self.inner.estimators.iter().map(|e| e.label()).collect()
    }

    #[getter]
    fn sweep_values(&self) -> Vec<usize> {
        self.inner.sweep.values.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    /// Runs the full sweep, releasing the GIL.
    fn run(&self, py: Python<'_>) -> PyResult<Vec<PyNmseResult>> {
        let config = self.inner.clone();
        let table = py
            .detach(move || harness::run_sweep(&config))
            .map_err(value_err)?;
        Ok(table.rows.iter().map(PyNmseResult::from).collect())
    }

    /// The results as `results.csv` text.
    fn run_csv(&self, py: Python<'_>) -> PyResult<String> {
        let config = self.inner.clone();
        let table = py
            .detach(move || harness::run_sweep(&config))
            .map_err(value_err)?;
        Ok(cli::results_csv(&table))
    }
}

/// `(name, needs_rank, description)` for every estimator.
#[pyfunction]
fn list_estimators() -> Vec<(&'static str, bool, &'static str)> {
    EstimatorKind::ALL
        .iter()
        .map(|k| (k.name(), k.needs_rank(), k.description()))
        .collect()
}

#[pymodule]
fn gevd_mimo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gevd, m)?)?;
    m.add_function(wrap_pyfunction!(local_scattering_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_eigenvalue_count, m)?)?;
    m.add_function(wrap_pyfunction!(subtraction_estimator, m)?)?;
    m.add_function(wrap_pyfunction!(gevd_lowrank, m)?)?;
    m.add_function(wrap_pyfunction!(list_estimators, m)?)?;
    m.add_class::<PyLowRank>()?;
    m.add_class::<PyNmseResult>()?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
