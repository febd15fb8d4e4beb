//! Python bindings: tensors, the pose model, patch transforms, heatmap
//! utilities, metrics and the latency benchmark.

use std::path::PathBuf;

use lgm_core::bench::bench_run;
use lgm_core::blocks::channel_shuffle as core_shuffle;
use lgm_core::heatmap::{self, KeypointSet};
use lgm_core::model::{load_weights, save_weights};
use lgm_core::{Error, Model, ModelConfig, PatchDims, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Diverged(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense row-major `float32` tensor.
#[pyclass(name = "Tensor", module = "lgm_pose")]
struct PyTensor {
    inner: Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: Tensor::new(shape, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self { inner: Tensor::zeros(shape) }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat copy of the values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn at(&self, index: Vec<usize>) -> PyResult<f32> {
        let shape = self.inner.shape();
        if index.len() != shape.len() || index.iter().zip(shape).any(|(i, n)| i >= n) {
            return Err(PyValueError::new_err(format!("index {index:?} out of range for shape {shape:?}")));
        }
        Ok(self.inner.at(&index))
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner.bit_eq(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn wrap(t: Tensor<f32>) -> PyTensor {
    PyTensor { inner: t }
}

/// Pose network in single precision, eval mode.
#[pyclass(name = "Model", module = "lgm_pose")]
struct PyModel {
    inner: Model<f32>,
}

#[pymethods]
impl PyModel {
    /// Builds from a JSON config file with seeded random weights.
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: PathBuf, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::load(config).map_err(to_py)?;
        Ok(Self { inner: Model::with_seed(&cfg, seed).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn reference(seed: u64) -> PyResult<Self> {
        Ok(Self { inner: Model::with_seed(&ModelConfig::reference(), seed).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn toy(seed: u64) -> PyResult<Self> {
        Ok(Self { inner: Model::with_seed(&ModelConfig::toy(), seed).map_err(to_py)? })
    }

    /// `3 x H x W` or `B x 3 x H x W` in, heatmaps out.
    fn forward(&self, py: Python<'_>, x: &PyTensor) -> PyResult<PyTensor> {
        let x = x.inner.clone();
        py.detach(|| self.inner.forward(&x)).map(wrap).map_err(to_py)
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    /// Multiply-accumulates at `(height, width)`, or at the configured size.
    #[pyo3(signature = (input_size = None))]
    fn count_flops(&self, input_size: Option<(usize, usize)>) -> PyResult<u64> {
        match input_size {
            Some((h, w)) => self.inner.cost_at(h, w).map(|r| r.macs()).map_err(to_py),
            None => Ok(self.inner.count_flops()),
        }
    }

    #[getter]
    fn input_size(&self) -> (usize, usize) {
        let [h, w] = self.inner.config().input_size;
        (h, w)
    }

    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        self.inner.output_shape().to_vec()
    }

    fn config_json(&self) -> String {
        self.inner.config().to_json()
    }

    fn save_weights(&self, path: PathBuf) -> PyResult<()> {
        save_weights(&self.inner, path).map_err(to_py)
    }

    fn load_weights(&mut self, path: PathBuf) -> PyResult<()> {
        load_weights(&mut self.inner, path).map_err(to_py)
    }
}

fn dims(x: &Tensor<f32>, patch: (usize, usize)) -> PyResult<PatchDims> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(PyValueError::new_err(format!("expected d x H x W, got {s:?}")));
    }
    let n = s.len();
    PatchDims::new(s[n - 2], s[n - 1], s[n - 3], patch.0, patch.1).map_err(to_py)
}

/// `d x H x W -> P x d x N`.
#[pyfunction]
fn npt_op1(x: &PyTensor, patch: (usize, usize)) -> PyResult<PyTensor> {
    lgm_core::npt_op1(&x.inner, &dims(&x.inner, patch)?).map(wrap).map_err(to_py)
}

/// `A x d x B -> B x d x A`.
#[pyfunction]
fn npt_op2(u: &PyTensor) -> PyResult<PyTensor> {
    lgm_core::npt_op2(&u.inner).map(wrap).map_err(to_py)
}

/// `N x d x P -> d x H x W` for a `(height, width)` map cut into `patch` patches.
#[pyfunction]
fn npt_op3(g: &PyTensor, size: (usize, usize), patch: (usize, usize)) -> PyResult<PyTensor> {
    let s = g.inner.shape();
    let d = *s.get(s.len().wrapping_sub(2)).ok_or_else(|| PyValueError::new_err("expected N x d x P"))?;
    let dims = PatchDims::new(size.0, size.1, d, patch.0, patch.1).map_err(to_py)?;
    lgm_core::npt_op3(&g.inner, &dims).map(wrap).map_err(to_py)
}

#[pyfunction]
fn channel_shuffle(x: &PyTensor, groups: usize) -> PyResult<PyTensor> {
    core_shuffle(&x.inner, groups).map(wrap).map_err(to_py)
}

fn keypoints(coords: Vec<(f64, f64)>, visible: Option<Vec<bool>>) -> PyResult<KeypointSet> {
    let coords: Vec<[f64; 2]> = coords.into_iter().map(|(x, y)| [x, y]).collect();
    match visible {
        None => Ok(KeypointSet::from_coords(coords)),
        Some(v) if v.len() == coords.len() => Ok(KeypointSet::with_visibility(coords, v)),
        Some(v) => Err(PyValueError::new_err(format!("{} keypoints but {} visibility flags", coords.len(), v.len()))),
    }
}

/// `K x H x W` Gaussian targets for `(x, y)` keypoints in heatmap cells.
#[pyfunction]
#[pyo3(signature = (coords, height, width, sigma = 2.0, visible = None))]
fn gaussian_targets(
    coords: Vec<(f64, f64)>,
    height: usize,
    width: usize,
    sigma: f64,
    visible: Option<Vec<bool>>,
) -> PyResult<PyTensor> {
    heatmap::gaussian_targets(&keypoints(coords, visible)?, height, width, sigma).map(wrap).map_err(to_py)
}

/// `[(x, y, score)]` per channel of a `K x H x W` heatmap tensor.
#[pyfunction]
fn decode_heatmaps(hm: &PyTensor) -> PyResult<Vec<(f64, f64, f64)>> {
    let d = heatmap::decode_heatmaps(&hm.inner).map_err(to_py)?;
    Ok(d.coords.iter().zip(&d.scores).map(|(c, s)| (c[0], c[1], *s)).collect())
}

/// Fraction of visible keypoints within `alpha * head_size`; `None` if none are visible.
#[pyfunction]
#[pyo3(signature = (pred, gt, head_size, alpha = 0.5, visible = None))]
fn pckh(
    pred: Vec<(f64, f64)>,
    gt: Vec<(f64, f64)>,
    head_size: f64,
    alpha: f64,
    visible: Option<Vec<bool>>,
) -> PyResult<Option<f64>> {
    heatmap::pckh(&keypoints(pred, None)?, &keypoints(gt, visible)?, head_size, alpha).map_err(to_py)
}

/// Object keypoint similarity; `k` defaults to the 17 COCO constants.
#[pyfunction]
#[pyo3(signature = (pred, gt, area, k = None, visible = None))]
fn oks(
    pred: Vec<(f64, f64)>,
    gt: Vec<(f64, f64)>,
    area: f64,
    k: Option<Vec<f64>>,
    visible: Option<Vec<bool>>,
) -> PyResult<Option<f64>> {
    let k = k.unwrap_or_else(heatmap::coco_k_constants);
    heatmap::oks(&keypoints(pred, None)?, &keypoints(gt, visible)?, area, &k).map_err(to_py)
}

/// Runs the latency benchmark and returns the report as a JSON string.
#[pyfunction(name = "bench")]
#[pyo3(signature = (config, width, height, warmup = 3, iters = 20, threads = 1, seed = 0))]
fn run_bench(
    py: Python<'_>,
    config: PathBuf,
    width: usize,
    height: usize,
    warmup: usize,
    iters: usize,
    threads: usize,
    seed: u64,
) -> PyResult<String> {
    let cfg = ModelConfig::load(config).map_err(to_py)?;
    let report = py.detach(|| bench_run(&cfg, [width, height], warmup, iters, threads, seed)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn lgm_pose(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(npt_op1, m)?)?;
    m.add_function(wrap_pyfunction!(npt_op2, m)?)?;
    m.add_function(wrap_pyfunction!(npt_op3, m)?)?;
    m.add_function(wrap_pyfunction!(channel_shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_targets, m)?)?;
    m.add_function(wrap_pyfunction!(decode_heatmaps, m)?)?;
    m.add_function(wrap_pyfunction!(pckh, m)?)?;
    m.add_function(wrap_pyfunction!(oks, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
