//! Python bindings. Point clouds cross the boundary as lists of `[x, y, z]`
//! (or `[x, y, z, intensity]`) rows and labels as lists of ints.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rvseg_core::dataio::{self, Dataset};
use rvseg_core::eval;
use rvseg_core::refine::{self, KnnParams, NlaParams, RefineParams, TieBreak};
use rvseg_core::synth;
use rvseg_core::tca;
use rvseg_core::{ClassId, Error, Point3, PointCloud};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for rvseg_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn cloud(points: &[Vec<f64>]) -> PyResult<PointCloud> {
    let mut xyz = Vec::with_capacity(points.len());
    let mut intensity = Vec::with_capacity(points.len());
    for (i, row) in points.iter().enumerate() {
        match row[..] {
            [_, _, _] => intensity.push(0.0),
            [_, _, _, r] => intensity.push(r as f32),
            _ => {
                return Err(PyValueError::new_err(format!(
                    "point {i} needs 3 or 4 values, got {}",
                    row.len()
                )))
            }
        }
        xyz.push(Point3::new(row[0], row[1], row[2]));
    }
    PointCloud::new(xyz, intensity).py()
}

fn dataset(name: &str) -> PyResult<Dataset> {
    match name {
        "semantic-kitti" => Ok(Dataset::SemanticKitti),
        "semantic-poss" => Ok(Dataset::SemanticPoss),
        _ => Err(PyValueError::new_err(format!("unknown dataset `{name}`"))),
    }
}

#[pyclass(name = "RigidTransform", module = "rvseg", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyRigidTransform {
    inner: rvseg_core::RigidTransform,
}

#[pymethods]
impl PyRigidTransform {
    /// From a 3x4 or 4x4 row-major matrix; the rotation must be orthonormal.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        if !(rows.len() == 3 || rows.len() == 4) || rows.iter().any(|r| r.len() != 4) {
            return Err(PyValueError::new_err("expected a 3x4 or 4x4 matrix"));
        }
        let mut flat = [0.0; 12];
        for (i, v) in rows.iter().take(3).flatten().enumerate() {
            flat[i] = *v;
        }
        if rows.len() == 4 && rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(PyValueError::new_err("last row must be [0, 0, 0, 1]"));
        }
        Ok(Self {
            inner: rvseg_core::RigidTransform::from_rows_3x4(&flat).py()?,
        })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: rvseg_core::RigidTransform::identity(),
        }
    }

    #[staticmethod]
    fn from_yaw_translation(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            inner: rvseg_core::RigidTransform::from_yaw_translation(yaw, x, y, z),
        }
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
    }

    /// `self * other`: apply `other` first.
    fn compose(&self, other: &Self) -> Self {
        Self {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn invert(&self) -> Self {
        Self {
            inner: self.inner.invert(),
        }
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        points
            .into_iter()
            .map(|[x, y, z]| {
                let p = self.inner.apply(&Point3::new(x, y, z));
                [p.x, p.y, p.z]
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("RigidTransform({:?})", self.matrix())
    }
}

/// `chain[to-1] * ... * chain[from]`, mapping frame `from` into frame `to`.
#[pyfunction]
fn compose_chain(chain: Vec<PyRigidTransform>, from: usize, to: usize) -> PyResult<PyRigidTransform> {
    let chain: Vec<_> = chain.iter().map(|t| t.inner).collect();
    Ok(PyRigidTransform {
        inner: rvseg_core::compose_chain(&chain, from, to).py()?,
    })
}

#[pyfunction]
fn relative_chain(poses: Vec<PyRigidTransform>) -> Vec<PyRigidTransform> {
    let poses: Vec<_> = poses.iter().map(|t| t.inner).collect();
    rvseg_core::geometry::relative_chain(&poses)
        .into_iter()
        .map(|inner| PyRigidTransform { inner })
        .collect()
}

#[pyclass(name = "ProjectionConfig", module = "rvseg", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyProjectionConfig {
    inner: rvseg_core::ProjectionConfig,
}

#[pymethods]
impl PyProjectionConfig {
    #[new]
    #[pyo3(signature = (height=64, width=2048, fov_up=3.0, fov_down=-25.0, drop_out_of_fov=false))]
    fn new(height: usize, width: usize, fov_up: f64, fov_down: f64, drop_out_of_fov: bool) -> PyResult<Self> {
        let mut inner = rvseg_core::ProjectionConfig::new(height, width, fov_up, fov_down).py()?;
        inner.drop_out_of_fov = drop_out_of_fov;
        Ok(Self { inner })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }
}

#[pyclass(name = "RangeImage", module = "rvseg")]
pub struct PyRangeImage {
    inner: rvseg_core::RangeImage,
}

#[pymethods]
impl PyRangeImage {
    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    /// Per-point `(row, col)`, or `None` for points that were not projected.
    fn point_pixels(&self) -> Vec<Option<(u32, u32)>> {
        self.inner
            .point_pixel
            .iter()
            .map(|p| p.map(|p| (p.row, p.col)))
            .collect()
    }

    fn occluded(&self) -> Vec<bool> {
        self.inner.point_occluded.clone()
    }

    /// Range per pixel, rows of `width`; 0 where empty.
    fn ranges(&self) -> Vec<Vec<f32>> {
        self.inner
            .pixels
            .chunks(self.inner.width)
            .map(|row| row.iter().map(|p| p[3]).collect())
            .collect()
    }

    fn valid_pixel_count(&self) -> usize {
        self.inner.valid_pixel_count()
    }

    /// Per-pixel label of the winning point; `fill` where empty.
    #[pyo3(signature = (point_labels, fill=0))]
    fn winner_labels(&self, point_labels: Vec<ClassId>, fill: ClassId) -> PyResult<Vec<Vec<ClassId>>> {
        let img = self.inner.winner_labels(&point_labels, fill).py()?;
        Ok(img.data.chunks(img.width).map(|r| r.to_vec()).collect())
    }

    fn occlusion_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = rvseg_core::occlusion_stats(&self.inner);
        let d = PyDict::new(py);
        d.set_item("total_points", s.total_points)?;
        d.set_item("projected_points", s.projected_points)?;
        d.set_item("occluded_points", s.occluded_points)?;
        d.set_item("occluded_fraction", s.occluded_fraction)?;
        d.set_item("pixels_multi", s.pixels_multi)?;
        d.set_item("clamped_points", s.clamped_points)?;
        d.set_item("clamped_occluded_points", s.clamped_occluded_points)?;
        Ok(d)
    }

    /// Refines per-point labels with range-guided k-NN voting.
    #[pyo3(signature = (point_labels, k=5, window=5, cutoff=1.0, ignore=0))]
    fn knn_refine(
        &self,
        point_labels: Vec<ClassId>,
        k: usize,
        window: usize,
        cutoff: f64,
        ignore: ClassId,
    ) -> PyResult<Vec<ClassId>> {
        let img = self.inner.winner_labels(&point_labels, ignore).py()?;
        refine::knn_refine(&self.inner, &img, &KnnParams { k, window, cutoff }, ignore).py()
    }

    /// Nearest label assignment for occluded points.
    #[pyo3(signature = (point_labels, patch=7, tau=1.0, ignore=0))]
    fn nla_refine(
        &self,
        point_labels: Vec<ClassId>,
        patch: usize,
        tau: f64,
        ignore: ClassId,
    ) -> PyResult<Vec<ClassId>> {
        let img = self.inner.winner_labels(&point_labels, ignore).py()?;
        refine::nla_refine(&self.inner, &img, &NlaParams { patch, tau }, ignore).py()
    }
}

/// Projects `points` (`[x, y, z]` or `[x, y, z, intensity]` rows).
#[pyfunction]
#[pyo3(signature = (points, config=None))]
fn project(points: Vec<Vec<f64>>, config: Option<PyProjectionConfig>) -> PyResult<PyRangeImage> {
    let cfg = config.map_or_else(Default::default, |c| c.inner);
    Ok(PyRangeImage {
        inner: rvseg_core::project(&cloud(&points)?, &cfg).py()?,
    })
}

/// Streaming max-vote refiner over the last `window_scans` scans.
#[pyclass(name = "MvpRefiner", module = "rvseg")]
pub struct PyMvpRefiner {
    inner: refine::MvpRefiner,
}

#[pymethods]
impl PyMvpRefiner {
    #[new]
    #[pyo3(signature = (num_classes, voxel=0.1, window_scans=10, ignore=Some(0), tie_break="keep"))]
    fn new(
        num_classes: usize,
        voxel: f64,
        window_scans: usize,
        ignore: Option<ClassId>,
        tie_break: &str,
    ) -> PyResult<Self> {
        let tie_break = match tie_break {
            "keep" => TieBreak::KeepCurrent,
            "lowest" => TieBreak::LowestId,
            other => {
                return Err(PyValueError::new_err(format!(
                    "tie_break must be `keep` or `lowest`, got `{other}`"
                )))
            }
        };
        let params = RefineParams {
            voxel,
            window_scans,
            tie_break,
        };
        Ok(Self {
            inner: refine::MvpRefiner::new(params, num_classes, ignore).py()?,
        })
    }

    /// Refines one scan. `step` maps the previous scan's sensor frame into
    /// this one's (identity for the first scan).
    #[pyo3(signature = (points, labels, step=None))]
    fn process(
        &mut self,
        points: Vec<[f64; 3]>,
        labels: Vec<ClassId>,
        step: Option<PyRigidTransform>,
    ) -> PyResult<Vec<ClassId>> {
        let points: Vec<Point3> = points.into_iter().map(|[x, y, z]| Point3::new(x, y, z)).collect();
        let step = step.map_or_else(rvseg_core::RigidTransform::identity, |s| s.inner);
        self.inner.process(&points, &labels, &step).py()
    }

    #[getter]
    fn voxels(&self) -> usize {
        self.inner.grid().len()
    }

    #[getter]
    fn scans(&self) -> usize {
        self.inner.window().len()
    }
}

#[pyclass(name = "ConfusionMatrix", module = "rvseg")]
pub struct PyConfusionMatrix {
    inner: eval::ConfusionMatrix,
}

#[pymethods]
impl PyConfusionMatrix {
    #[new]
    #[pyo3(signature = (num_classes, ignore=None))]
    fn new(num_classes: usize, ignore: Option<ClassId>) -> PyResult<Self> {
        Ok(Self {
            inner: eval::ConfusionMatrix::new(num_classes, ignore).py()?,
        })
    }

    fn accumulate(&mut self, gt: Vec<ClassId>, pred: Vec<ClassId>) -> PyResult<()> {
        self.inner.accumulate(&gt, &pred).py()
    }

    fn merge(&mut self, other: &PyConfusionMatrix) -> PyResult<()> {
        self.inner.merge(&other.inner).py()
    }

    fn counts(&self) -> Vec<Vec<u64>> {
        let c = self.inner.num_classes();
        self.inner.counts().chunks(c).map(|r| r.to_vec()).collect()
    }

    /// `(per_class, miou)`; excluded classes are `None`.
    #[pyo3(signature = (include_absent=false))]
    fn iou(&self, include_absent: bool) -> PyResult<(Vec<Option<f64>>, f64)> {
        let r = self.inner.iou(include_absent).py()?;
        Ok((r.per_class, r.miou))
    }
}

/// Temporal cross-attention followed by the feed-forward block, on
/// `[row][col][channel]` nested lists with seeded weights.
#[pyfunction]
#[pyo3(signature = (current, previous, seed=tca::DEFAULT_SEED, heads=1))]
fn temporal_fusion(
    current: Vec<Vec<Vec<f64>>>,
    previous: Vec<Vec<Vec<f64>>>,
    seed: u64,
    heads: usize,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let grid = |g: &Vec<Vec<Vec<f64>>>| -> PyResult<tca::FeatureGrid> {
        let h = g.len();
        let w = g.first().map_or(0, |r| r.len());
        let c = g.first().and_then(|r| r.first()).map_or(0, |v| v.len());
        let data: Vec<f64> = g.iter().flatten().flatten().copied().collect();
        if g.iter().any(|r| r.len() != w || r.iter().any(|v| v.len() != c)) {
            return Err(PyValueError::new_err("feature grid must be rectangular"));
        }
        tca::FeatureGrid::new(h, w, c, data).py()
    };
    let (cur, prev) = (grid(&current)?, grid(&previous)?);
    let mut params = tca::AttentionParams::seeded(cur.channels, None, seed);
    params.heads = heads;
    let out = tca::temporal_fusion(&cur, &prev, &params).py()?;
    Ok(out
        .data
        .chunks(out.channels * out.width)
        .map(|row| row.chunks(out.channels).map(|v| v.to_vec()).collect())
        .collect())
}

/// `[x, y, z, intensity]` rows of a `.bin` scan.
#[pyfunction]
fn read_scan(path: std::path::PathBuf) -> PyResult<Vec<[f32; 4]>> {
    Ok(dataio::read_scan(path).py()?.points)
}

/// Train ids of a `.label` file.
#[pyfunction]
#[pyo3(signature = (path, dataset="semantic-kitti"))]
fn read_labels(path: std::path::PathBuf, dataset: &str) -> PyResult<Vec<ClassId>> {
    dataio::read_labels(path, &self::dataset(dataset)?.label_map()).py()
}

#[pyfunction]
#[pyo3(signature = (path, labels, dataset="semantic-kitti"))]
fn write_labels(path: std::path::PathBuf, labels: Vec<ClassId>, dataset: &str) -> PyResult<()> {
    dataio::write_labels(path, &labels, &self::dataset(dataset)?.label_map()).py()
}

/// Generates the billboard drive-by sequence. Returns a dict with per-frame
/// `points`, `labels`, `predictions` (ground truth after re-projection),
/// `occluded` indices, and sensor-to-world `poses`.
#[pyfunction]
#[pyo3(signature = (frames=20, config=None, densify=2))]
fn synth_sequence<'py>(
    py: Python<'py>,
    frames: usize,
    config: Option<PyProjectionConfig>,
    densify: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map_or_else(Default::default, |c| c.inner);
    let seq = synth::billboard_drive(frames, cfg, densify).py()?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut predictions = Vec::new();
    for s in &seq.scans {
        points.push(s.cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>());
        labels.push(s.labels().to_vec());
        predictions.push(synth::reprojected_ground_truth(s, &cfg, 0).py()?);
    }
    let d = PyDict::new(py);
    d.set_item("points", points)?;
    d.set_item("labels", labels)?;
    d.set_item("predictions", predictions)?;
    d.set_item(
        "occluded",
        seq.occluded
            .iter()
            .map(|o| o.iter().map(|p| p.index).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "poses",
        seq.poses
            .iter()
            .map(|&inner| PyRigidTransform { inner })
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

#[pymodule]
fn rvseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyProjectionConfig>()?;
    m.add_class::<PyRangeImage>()?;
    m.add_class::<PyMvpRefiner>()?;
    m.add_class::<PyConfusionMatrix>()?;
    m.add_function(wrap_pyfunction!(compose_chain, m)?)?;
    m.add_function(wrap_pyfunction!(relative_chain, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(read_scan, m)?)?;
    m.add_function(wrap_pyfunction!(read_labels, m)?)?;
    m.add_function(wrap_pyfunction!(write_labels, m)?)?;
    m.add_function(wrap_pyfunction!(synth_sequence, m)?)?;
    Ok(())
}
