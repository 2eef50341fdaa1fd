//! Python bindings: datasets, POUnet models, LSGD training and the
//! benchmark helpers. Points cross the boundary as lists of rows.

use std::fs::File;

use pounet::bench::{self, WaveKind};
use pounet::optim;
use pounet::pou::{init_rbf, init_resnet_box, PartitionNet};
use pounet::{
    linalg, model, seeded_rng, Dataset, DenseMatrix, Domain, LsgdConfig, MonomialBasis, PouModel, TrainReport,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(value_err)
}

fn rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Training points `xs` (list of rows) with scalar labels `ys`. Duplicate
/// points are dropped, keeping the first occurrence.
#[pyclass(name = "Dataset", module = "pypounet")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Dataset::new(matrix(xs)?, ys).map_err(value_err)? })
    }

    /// Sine on the cross `{x1 = 0} ∪ {x2 = 0}` sampled on a grid per arm.
    #[staticmethod]
    fn cross(n_per_axis: usize) -> PyResult<Self> {
        Ok(Self { inner: bench::make_cross_dataset(n_per_axis).map_err(value_err)? })
    }

    /// Uniform samples of the triangle (`kind="triangle"`) or quadratic wave `p`.
    #[staticmethod]
    #[pyo3(signature = (p, n_data, kind = "triangle", seed = 0))]
    fn wave(p: u32, n_data: usize, kind: &str, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "triangle" => WaveKind::Triangle,
            "quadratic" => WaveKind::Quadratic,
            other => return Err(PyValueError::new_err(format!("unknown wave kind {other:?}"))),
        };
        let inner = bench::make_wave_dataset(p, n_data, kind, &mut seeded_rng(seed)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(Self { inner: bench::read_dataset_csv(f).map_err(value_err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        bench::write_dataset_csv(&self.inner, f).map_err(value_err)
    }

    #[getter]
    fn xs(&self) -> Vec<Vec<f64>> {
        rows(self.inner.xs())
    }

    #[getter]
    fn ys(&self) -> Vec<f64> {
        self.inner.ys().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Settings of one LSGD run.
#[pyclass(name = "LsgdConfig", module = "pypounet")]
struct PyLsgdConfig {
    inner: LsgdConfig,
}

#[pymethods]
impl PyLsgdConfig {
    /// `lam` is the ridge weight, decayed by `rho` after `n_stag` epochs
    /// without improvement (`n_stag` defaults to `n_epoch`).
    #[new]
    #[pyo3(signature = (n_epoch, lr = 1e-3, lam = 0.0, rho = 0.0, n_stag = None))]
    fn new(n_epoch: usize, lr: f64, lam: f64, rho: f64, n_stag: Option<usize>) -> PyResult<Self> {
        let inner = LsgdConfig { n_epoch, lambda: lam, rho, n_stag: n_stag.unwrap_or(n_epoch.max(1)), lr };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_epoch(&self) -> usize {
        self.inner.n_epoch
    }

    #[getter]
    fn lr(&self) -> f64 {
        self.inner.lr
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn n_stag(&self) -> usize {
        self.inner.n_stag
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("LsgdConfig(n_epoch={}, lr={}, lam={}, rho={}, n_stag={})", c.n_epoch, c.lr, c.lambda, c.rho, c.n_stag)
    }
}

#[pyclass(name = "TrainReport", module = "pypounet")]
struct PyTrainReport {
    inner: TrainReport,
}

#[pymethods]
impl PyTrainReport {
    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace.clone()
    }

    #[getter]
    fn lambda_trace(&self) -> Vec<f64> {
        self.inner.lambda_trace.clone()
    }

    #[getter]
    fn rel_l2_trace(&self) -> Vec<f64> {
        self.inner.rel_l2_trace.clone()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.best_epoch
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.final_loss
    }

    #[getter]
    fn final_rel_l2(&self) -> f64 {
        self.inner.final_rel_l2
    }

    #[getter]
    fn final_rms(&self) -> f64 {
        self.inner.final_rms
    }

    #[getter]
    fn phase_boundary(&self) -> Option<usize> {
        self.inner.phase_boundary
    }

    #[getter]
    fn collapsed_partitions(&self) -> Vec<usize> {
        self.inner.collapsed_partitions.clone()
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    fn trace_csv(&self) -> String {
        self.inner.trace_csv()
    }
}

/// POUnet `y(x) = Σ_α φ_α(x) Σ_β c_αβ P_β(x)`.
#[pyclass(name = "PouModel", module = "pypounet")]
struct PyPouModel {
    inner: PouModel,
}

fn build_model(partition: PartitionNet, domain: &Domain, m_max: usize, rng: &mut pounet::Rng) -> PyResult<PyPouModel> {
    let basis = MonomialBasis::for_domain(domain, m_max);
    let inner = PouModel::with_random_coeffs(partition, basis, rng).map_err(value_err)?;
    Ok(PyPouModel { inner })
}

#[pymethods]
impl PyPouModel {
    /// Normalized-Gaussian partition with centers uniform in the box
    /// `[lower, upper]` and unit shapes; coefficients standard normal.
    #[staticmethod]
    #[pyo3(signature = (n_part, m_max, lower, upper, seed = 0))]
    fn rbf(n_part: usize, m_max: usize, lower: Vec<f64>, upper: Vec<f64>, seed: u64) -> PyResult<Self> {
        let domain = Domain::new(lower, upper).map_err(value_err)?;
        let mut rng = seeded_rng(seed);
        let net = init_rbf(n_part, &domain, &mut rng).map_err(value_err)?;
        build_model(net.into(), &domain, m_max, &mut rng)
    }

    /// Box-initialized ReLU ResNet partition with a softmax head.
    #[staticmethod]
    #[pyo3(signature = (n_part, m_max, width, depth, lower, upper, seed = 0))]
    fn resnet(
        n_part: usize,
        m_max: usize,
        width: usize,
        depth: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let domain = Domain::new(lower, upper).map_err(value_err)?;
        let mut rng = seeded_rng(seed);
        let net = init_resnet_box(width, depth, n_part, &domain, &mut rng).map_err(value_err)?;
        build_model(net.into(), &domain, m_max, &mut rng)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let ckpt = serde_json::from_str(text).map_err(value_err)?;
        Ok(Self { inner: PouModel::from_checkpoint(ckpt).map_err(value_err)? })
    }

    #[pyo3(signature = (seed = None))]
    fn to_json(&self, seed: Option<u64>) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_checkpoint(seed)).map_err(value_err)
    }

    fn predict(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict(&matrix(xs)?).map_err(value_err)
    }

    /// Partition values, one row of `n_part` weights per point.
    fn partitions(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let phi = pounet::pou::eval_partitions(self.inner.partition(), &matrix(xs)?).map_err(value_err)?;
        Ok(rows(&phi))
    }

    /// Sum of squared residuals.
    fn loss(&self, data: PyRef<'_, PyDataset>) -> PyResult<f64> {
        model::loss(&self.inner, &data.inner).map_err(value_err)
    }

    /// Gradient of `loss` with respect to the partition parameters.
    fn loss_grad(&self, data: PyRef<'_, PyDataset>) -> PyResult<Vec<f64>> {
        Ok(model::loss_grad_xi(&self.inner, &data.inner).map_err(value_err)?.into_inner())
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.partition().params().into_inner()
    }

    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_partition_params(&params).map_err(value_err)
    }

    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.inner.coeffs().to_vec()
    }

    fn set_coeffs(&mut self, coeffs: Vec<f64>) -> PyResult<()> {
        self.inner.set_coeffs(coeffs).map_err(value_err)
    }

    #[getter]
    fn n_part(&self) -> usize {
        self.inner.n_part()
    }

    #[getter]
    fn basis_size(&self) -> usize {
        self.inner.basis().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PouModel({}, n_part={}, basis_size={})",
            self.inner.partition().architecture().tag(),
            self.inner.n_part(),
            self.inner.basis().len()
        )
    }
}

/// Trains with LSGD; returns the best model and the run report.
#[pyfunction]
fn lsgd(
    model: PyRef<'_, PyPouModel>,
    data: PyRef<'_, PyDataset>,
    cfg: PyRef<'_, PyLsgdConfig>,
) -> PyResult<(PyPouModel, PyTrainReport)> {
    let (best, report) = optim::lsgd(&model.inner, &data.inner, &cfg.inner).map_err(value_err)?;
    Ok((PyPouModel { inner: best }, PyTrainReport { inner: report }))
}

/// Regularized LSGD (`pre`) followed by unregularized LSGD (`main`; only
/// its `n_epoch` and `lr` are used).
#[pyfunction]
fn two_phase_lsgd(
    model: PyRef<'_, PyPouModel>,
    data: PyRef<'_, PyDataset>,
    pre: PyRef<'_, PyLsgdConfig>,
    main: PyRef<'_, PyLsgdConfig>,
) -> PyResult<(PyPouModel, PyTrainReport)> {
    let (best, report) =
        optim::two_phase_lsgd(&model.inner, &data.inner, &pre.inner, &main.inner).map_err(value_err)?;
    Ok((PyPouModel { inner: best }, PyTrainReport { inner: report }))
}

/// `argmin_c ‖A c − y‖² + lam ‖c‖²` (minimum-norm when `lam = 0`).
#[pyfunction]
#[pyo3(signature = (a, y, lam = 0.0))]
fn solve_least_squares(a: Vec<Vec<f64>>, y: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    linalg::solve_least_squares(&matrix(a)?, &y, lam).map_err(value_err)
}

#[pyfunction]
fn tri_wave(x: f64, p: u32) -> f64 {
    bench::tri_wave(x, p)
}

#[pyfunction]
fn relative_l2(yhat: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    bench::relative_l2(&yhat, &y).map_err(value_err)
}

#[pyfunction]
fn rms(yhat: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    bench::rms(&yhat, &y).map_err(value_err)
}

/// RMS of the exact degree-`m` fit of `sin(2π x)` on uniform indicator
/// partitions of `[0, 1]`, as `(n_part, rms)` pairs.
#[pyfunction]
#[pyo3(signature = (m, n_parts, n_points = 4096))]
fn theorem1_scaling(m: usize, n_parts: Vec<usize>, n_points: usize) -> PyResult<Vec<(usize, f64)>> {
    let target = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
    bench::theorem1_scaling_oracle(m, &n_parts, target, n_points).map_err(value_err)
}

#[pyfunction]
fn loglog_slope(points: Vec<(usize, f64)>) -> f64 {
    bench::loglog_slope(&points)
}

#[pymodule]
fn pypounet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyLsgdConfig>()?;
    m.add_class::<PyTrainReport>()?;
    m.add_class::<PyPouModel>()?;
    m.add_function(wrap_pyfunction!(lsgd, m)?)?;
    m.add_function(wrap_pyfunction!(two_phase_lsgd, m)?)?;
    m.add_function(wrap_pyfunction!(solve_least_squares, m)?)?;
    m.add_function(wrap_pyfunction!(tri_wave, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2, m)?)?;
    m.add_function(wrap_pyfunction!(rms, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(loglog_slope, m)?)?;
    Ok(())
}
