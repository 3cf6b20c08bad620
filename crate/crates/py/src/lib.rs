//! Python bindings for `bevfuse`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use bevfuse::dff::{seeded_weights, CafConfig, ProbNetConfig};
use bevfuse::geometry::Mat3;
use bevfuse::pipeline::{self, Ablation, FusionModel, Geometry, HtPath, PipelineOptions};
use bevfuse::{btsr, synth, Executor};

fn to_py(e: bevfuse::Error) -> PyErr {
    match e {
        bevfuse::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for bevfuse::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn executor(threads: usize) -> PyResult<Executor> {
    Executor::with_threads(threads).py()
}

fn height_mode(heights: &str) -> PyResult<bevfuse::HeightMode> {
    match heights {
        "multi_res" | "multi-res" => Ok(bevfuse::HeightMode::MultiRes),
        _ => match heights.strip_prefix("uniform:").and_then(|n| n.parse().ok()) {
            Some(n) => Ok(bevfuse::HeightMode::Uniform(n)),
            None => Err(PyValueError::new_err(format!(
                "heights must be 'multi_res' or 'uniform:N', got {heights:?}"
            ))),
        },
    }
}

fn weight_mode(mode: &str) -> PyResult<bevfuse::WeightMode> {
    match mode {
        "depth_mask" => Ok(bevfuse::WeightMode::DepthMask),
        "depth_only" => Ok(bevfuse::WeightMode::DepthOnly),
        _ => Err(PyValueError::new_err(format!("unknown weight mode {mode:?}"))),
    }
}

fn sampler(mode: &str) -> PyResult<bevfuse::SamplerMode> {
    match mode {
        "round" => Ok(bevfuse::SamplerMode::Round),
        "interp" => Ok(bevfuse::SamplerMode::Interp),
        _ => Err(PyValueError::new_err(format!("unknown sampler {mode:?}"))),
    }
}

/// Dense row-major float32 tensor.
#[pyclass(name = "Tensor", module = "bevfuse_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: bevfuse::Tensor,
}

impl From<bevfuse::Tensor> for PyTensor {
    fn from(inner: bevfuse::Tensor) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(bevfuse::Tensor::new(shape, data).py()?.into())
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Ok(bevfuse::Tensor::zeros(&shape).py()?.into())
    }

    /// Decodes a BTSR byte string.
    #[staticmethod]
    fn frombytes(data: &[u8]) -> PyResult<Self> {
        Ok(btsr::decode(data).py()?.into())
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat list of values in row-major order.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    /// BTSR encoding.
    fn tobytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &btsr::encode(&self.inner))
    }

    fn max_abs(&self) -> f32 {
        self.inner.max_abs()
    }

    fn bit_eq(&self, other: &PyTensor) -> bool {
        self.inner.bit_eq(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyfunction]
fn read_btsr(path: PathBuf) -> PyResult<PyTensor> {
    Ok(btsr::read(path).py()?.into())
}

#[pyfunction]
fn write_btsr(tensor: &PyTensor, path: PathBuf) -> PyResult<()> {
    btsr::write(&tensor.inner, path).py()
}

/// Pinhole camera with ego-to-camera extrinsics.
#[pyclass(name = "CameraRig", module = "bevfuse_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCameraRig {
    inner: bevfuse::CameraRig,
}

#[pymethods]
impl PyCameraRig {
    #[new]
    fn new(cam_id: u32, intrinsics: Mat3, extrinsics: [[f64; 4]; 4], feat_w: usize, feat_h: usize) -> PyResult<Self> {
        Ok(Self {
            inner: bevfuse::CameraRig::new(cam_id, intrinsics, extrinsics, feat_w, feat_h).py()?,
        })
    }

    /// Level camera at `position` whose optical axis has heading `yaw` (radians).
    #[staticmethod]
    fn looking_at_yaw(
        cam_id: u32,
        yaw: f64,
        position: [f64; 3],
        intrinsics: Mat3,
        feat_w: usize,
        feat_h: usize,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: bevfuse::CameraRig::looking_at_yaw(cam_id, yaw, position, intrinsics, feat_w, feat_h).py()?,
        })
    }

    #[getter]
    fn cam_id(&self) -> u32 {
        self.inner.cam_id()
    }

    #[getter]
    fn feat_size(&self) -> (usize, usize) {
        (self.inner.feat_w(), self.inner.feat_h())
    }

    /// `(u, v, depth)` or `None` behind the camera.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.inner.project(p).map(|q| (q.u, q.v, q.d))
    }

    fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        self.inner.unproject(u, v, depth)
    }

    fn __repr__(&self) -> String {
        format!("CameraRig(cam_id={})", self.inner.cam_id())
    }
}

#[pyfunction]
fn project_point(p: [f64; 3], cam: &PyCameraRig) -> Option<(f64, f64, f64)> {
    bevfuse::project_point(p, &cam.inner).map(|q| (q.u, q.v, q.d))
}

/// Height samples in meters: `"multi_res"` or `"uniform:N"`.
#[pyfunction]
#[pyo3(signature = (heights = "multi_res"))]
fn make_height_samples(heights: &str) -> PyResult<Vec<f64>> {
    Ok(bevfuse::make_height_samples(height_mode(heights)?)
        .py()?
        .values()
        .to_vec())
}

/// Synthetic multi-camera scene.
#[pyclass(name = "Scene", module = "bevfuse_py")]
pub struct PyScene {
    inner: bevfuse::SceneBundle,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: bevfuse::SceneBundle::load(dir).py()?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).py()
    }

    #[getter]
    fn rigs(&self) -> Vec<PyCameraRig> {
        self.inner
            .rigs
            .iter()
            .map(|r| PyCameraRig { inner: r.clone() })
            .collect()
    }

    /// `[N, C, H, W]`.
    #[getter]
    fn features(&self) -> PyTensor {
        self.inner.inputs.features().clone().into()
    }

    /// `[N, bins, H, W]`.
    #[getter]
    fn depth(&self) -> PyTensor {
        self.inner.inputs.depth().clone().into()
    }

    /// `[N, 1, H, W]`.
    #[getter]
    fn mask(&self) -> PyTensor {
        self.inner.inputs.mask().clone().into()
    }

    #[getter]
    fn gt_bev(&self) -> PyTensor {
        self.inner.gt_bev.clone().into()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "Scene(cameras={}, channels={}, grid={}x{})",
            s.rigs.len(),
            s.inputs.channels(),
            s.grid.ny(),
            s.grid.nx()
        )
    }
}

/// Generates a scene on the default grid and depth bins. `spec_json` is a
/// scene description; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (seed = None, spec_json = None))]
fn generate_scene(seed: Option<u64>, spec_json: Option<&str>) -> PyResult<PyScene> {
    let mut spec: bevfuse::SceneSpec = match spec_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => bevfuse::SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let inner = bevfuse::generate_scene(&spec, &Default::default(), &Default::default()).py()?;
    Ok(PyScene { inner })
}

/// Lookup tables for a scene's camera setup.
#[pyclass(name = "Tables", module = "bevfuse_py")]
pub struct PyTables {
    geometry: Geometry,
    inner: pipeline::Tables,
}

#[pymethods]
impl PyTables {
    #[getter]
    fn ht_entries(&self) -> usize {
        self.inner.ht.table().len()
    }

    #[getter]
    fn lss_entries(&self) -> usize {
        self.inner.lss.table().len()
    }

    /// Raw HTLT and LSPT encodings.
    fn tobytes<'py>(&self, py: Python<'py>) -> (Bound<'py, PyBytes>, Bound<'py, PyBytes>) {
        (
            PyBytes::new(py, &self.inner.ht.table().encode()),
            PyBytes::new(py, &self.inner.lss.table().encode()),
        )
    }
}

fn scene_geometry(scene: &PyScene, heights: &str) -> PyResult<Geometry> {
    let s = &scene.inner;
    Ok(Geometry {
        rigs: s.rigs.clone(),
        grid: s.grid,
        heights: bevfuse::make_height_samples(height_mode(heights)?).py()?,
        depth_bins: s.depth_bins,
    })
}

#[pyfunction]
#[pyo3(signature = (scene, heights = "multi_res"))]
fn precompute(scene: &PyScene, heights: &str) -> PyResult<PyTables> {
    let geometry = scene_geometry(scene, heights)?;
    let inner = geometry.precompute().py()?;
    Ok(PyTables { geometry, inner })
}

#[pyfunction]
#[pyo3(signature = (scene, tables, threads = 1))]
fn ht_transform_fast(py: Python<'_>, scene: &PyScene, tables: &PyTables, threads: usize) -> PyResult<PyTensor> {
    let ex = executor(threads)?;
    let r = py.detach(|| bevfuse::ht_transform_fast(&scene.inner.inputs, &tables.inner.ht, &ex));
    Ok(r.py()?.into())
}

#[pyfunction]
#[pyo3(signature = (scene, sampler = "round", heights = "multi_res", threads = 1))]
fn ht_transform_naive(
    py: Python<'_>,
    scene: &PyScene,
    sampler: &str,
    heights: &str,
    threads: usize,
) -> PyResult<PyTensor> {
    let g = scene_geometry(scene, heights)?;
    let mode = self::sampler(sampler)?;
    let ex = executor(threads)?;
    let r = py.detach(|| {
        bevfuse::ht_transform_naive(
            &scene.inner.inputs,
            &g.rigs,
            &g.grid,
            &g.heights,
            &g.depth_bins,
            mode,
            &ex,
        )
    });
    Ok(r.py()?.into())
}

#[pyfunction]
#[pyo3(signature = (scene, tables, weight_mode = "depth_mask", threads = 1))]
fn lss_pool(
    py: Python<'_>,
    scene: &PyScene,
    tables: &PyTables,
    weight_mode: &str,
    threads: usize,
) -> PyResult<PyTensor> {
    let mode = self::weight_mode(weight_mode)?;
    let ex = executor(threads)?;
    let r = py.detach(|| bevfuse::lss_pool(&scene.inner.inputs, &tables.inner.lss, mode, &ex));
    Ok(r.py()?.into())
}

/// Full transformation. Returns a dict with `f_lss`, `f_ht`, `f_channel`,
/// `affinity`, `prob` and `f`.
#[pyfunction]
#[pyo3(signature = (
    scene, tables, weights_seed = 11, threads = 1, uniform_depth = false,
    disable_mask = false, force_affinity = None, force_prob = None
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    scene: &PyScene,
    tables: &PyTables,
    weights_seed: u64,
    threads: usize,
    uniform_depth: bool,
    disable_mask: bool,
    force_affinity: Option<f32>,
    force_prob: Option<f32>,
) -> PyResult<Bound<'py, PyDict>> {
    let c = scene.inner.inputs.channels();
    let caf = CafConfig::new(c).py()?;
    let prob = ProbNetConfig::new(c).py()?;
    let weights = seeded_weights(&caf, &prob, weights_seed).py()?;
    let model = FusionModel { caf, prob, weights };
    let options = PipelineOptions {
        ht_path: HtPath::Fast,
        ablation: Ablation {
            uniform_depth,
            disable_mask,
            force_affinity,
            force_prob,
        },
        ..PipelineOptions::default()
    };
    let ex = executor(threads)?;
    let out = py
        .detach(|| {
            pipeline::run_pipeline(
                &scene.inner.inputs,
                &tables.geometry,
                &tables.inner,
                &model,
                &options,
                &ex,
            )
        })
        .py()?;
    let d = PyDict::new(py);
    for (name, t) in out.named() {
        d.set_item(name, PyTensor::from(t.clone()))?;
    }
    Ok(d)
}

/// Mean per-cell energy over occupied and empty ground-truth cells.
#[pyfunction]
fn energy_stats<'py>(py: Python<'py>, f: &PyTensor, gt_bev: &PyTensor) -> PyResult<Bound<'py, PyDict>> {
    let s = pipeline::energy_stats(&f.inner, &gt_bev.inner).py()?;
    let d = PyDict::new(py);
    d.set_item("occupied_cells", s.occupied_cells)?;
    d.set_item("empty_cells", s.empty_cells)?;
    d.set_item("mean_occupied", s.mean_occupied)?;
    d.set_item("mean_empty", s.mean_empty)?;
    d.set_item("separation", s.separation)?;
    Ok(d)
}

#[pyfunction]
fn read_rigs(path: PathBuf) -> PyResult<Vec<PyCameraRig>> {
    Ok(synth::read_rigs(path)
        .py()?
        .into_iter()
        .map(|inner| PyCameraRig { inner })
        .collect())
}

#[pymodule]
fn bevfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyCameraRig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyTables>()?;
    m.add_function(wrap_pyfunction!(read_btsr, m)?)?;
    m.add_function(wrap_pyfunction!(write_btsr, m)?)?;
    m.add_function(wrap_pyfunction!(read_rigs, m)?)?;
    m.add_function(wrap_pyfunction!(project_point, m)?)?;
    m.add_function(wrap_pyfunction!(make_height_samples, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(precompute, m)?)?;
    m.add_function(wrap_pyfunction!(ht_transform_fast, m)?)?;
    m.add_function(wrap_pyfunction!(ht_transform_naive, m)?)?;
    m.add_function(wrap_pyfunction!(lss_pool, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(energy_stats, m)?)?;
    Ok(())
}
