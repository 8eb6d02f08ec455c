//! Python bindings for `dds-core`.

use std::path::PathBuf;

use dds_core::dataset::{
    make_compositional_split, write_corpus, Corpus, FrameAnnotation, GenConfig, Holdout, RelationRules, SplitConfig,
    SplitSpec, TripletClass, RELATION_NAMES,
};
use dds_core::geometry::{self, BBox, RegionMode};
use dds_core::image::Image;
use dds_core::inference::TripletPrediction;
use dds_core::matching::{self, CostMatrix};
use dds_core::metrics::EvalOptions;
use dds_core::model::{load_checkpoint, Dds, ModelConfig};
use dds_core::pipeline::{evaluate_videos, load_split, predict_video, save_split};
use dds_core::train::VideoSample;
use dds_core::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Numerical(_) => PyArithmeticError::new_err(msg),
        Error::Json(_) | Error::Incompatible(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Axis-aligned box in normalized center format.
#[pyclass(name = "BBox", module = "dds_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBBox {
    inner: BBox,
}

#[pymethods]
impl PyBBox {
    #[new]
    fn new(cx: f64, cy: f64, w: f64, h: f64) -> PyResult<Self> {
        Ok(PyBBox {
            inner: BBox::new(cx, cy, w, h).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> PyResult<Self> {
        Ok(PyBBox {
            inner: BBox::from_corners(x0, y0, x1, y1).map_err(to_py)?,
        })
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx()
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy()
    }
    #[getter]
    fn w(&self) -> f64 {
        self.inner.w()
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    fn corners(&self) -> [f64; 4] {
        self.inner.corners()
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn iou(&self, other: PyRef<'_, PyBBox>) -> f64 {
        self.inner.iou(&other.inner)
    }

    fn giou(&self, other: PyRef<'_, PyBBox>) -> f64 {
        self.inner.giou(&other.inner)
    }

    fn union(&self, other: PyRef<'_, PyBBox>) -> PyBBox {
        PyBBox {
            inner: self.inner.union_box(&other.inner),
        }
    }

    /// None when the boxes do not overlap.
    fn intersection(&self, other: PyRef<'_, PyBBox>) -> Option<PyBBox> {
        self.inner.intersection_box(&other.inner).map(|inner| PyBBox { inner })
    }

    fn __eq__(&self, other: PyRef<'_, PyBBox>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let [cx, cy, w, h] = self.inner.to_array();
        format!("BBox(cx={cx}, cy={cy}, w={w}, h={h})")
    }
}

/// Relation-region box of a subject/object pair: `"union"`, or the
/// mixture rule when `theta` is given.
#[pyfunction]
#[pyo3(signature = (subject, object, theta=None))]
fn relation_region(subject: PyRef<'_, PyBBox>, object: PyRef<'_, PyBBox>, theta: Option<f64>) -> PyResult<PyBBox> {
    let mode = match theta {
        Some(theta) => RegionMode::Mixture { theta },
        None => RegionMode::Union,
    };
    Ok(PyBBox {
        inner: geometry::relation_region(&subject.inner, &object.inner, mode).map_err(to_py)?,
    })
}

fn cost_matrix(rows: Vec<Vec<f64>>) -> PyResult<CostMatrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("cost matrix needs at least one prediction row"));
    }
    CostMatrix::from_rows(&rows).map_err(to_py)
}

/// Minimum-cost assignment of ground truths (columns) to predictions
/// (rows); returns `(prediction, ground_truth)` pairs and the total cost.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let c = cost_matrix(cost)?;
    let a = matching::hungarian(&c).map_err(to_py)?;
    let total = a.total_cost(&c);
    Ok((a.pairs, total))
}

/// Exhaustive reference for `hungarian` on small problems.
#[pyfunction]
fn brute_force_match(cost: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let c = cost_matrix(cost)?;
    let a = matching::brute_force_match(&c).map_err(to_py)?;
    let total = a.total_cost(&c);
    Ok((a.pairs, total))
}

/// Relation labels the generator assigns to a subject/object pair.
#[pyfunction]
fn relations(subject: PyRef<'_, PyBBox>, object: PyRef<'_, PyBBox>) -> Vec<usize> {
    RelationRules::default().relations(&subject.inner, &object.inner)
}

#[pyfunction]
fn relation_names() -> Vec<&'static str> {
    RELATION_NAMES.to_vec()
}

fn frame_to_py<'py>(py: Python<'py>, f: &FrameAnnotation) -> PyResult<Bound<'py, PyList>> {
    let out = PyList::empty(py);
    for t in &f.triplets {
        let d = PyDict::new(py);
        d.set_item("subject_box", PyBBox { inner: t.subject_box })?;
        d.set_item("subject_label", t.subject_label)?;
        d.set_item("object_box", PyBBox { inner: t.object_box })?;
        d.set_item("object_label", t.object_label)?;
        d.set_item("relations", t.relations.clone())?;
        out.append(d)?;
    }
    Ok(out)
}

fn prediction_to_py<'py>(py: Python<'py>, p: &TripletPrediction) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("subject_box", PyBBox { inner: p.subject_box })?;
    d.set_item("subject_label", p.subject_label)?;
    d.set_item("object_box", PyBBox { inner: p.object_box })?;
    d.set_item("object_label", p.object_label)?;
    d.set_item("relation", p.relation)?;
    d.set_item("score", p.score)?;
    d.set_item("query", p.query)?;
    Ok(d)
}

fn classes(cs: &[TripletClass]) -> Vec<(usize, usize, usize)> {
    cs.iter().map(|c| (c.subject, c.object, c.relation)).collect()
}

/// Train/test partition with seen and unseen triplet classes.
#[pyclass(name = "Split", module = "dds_py", frozen, skip_from_py_object)]
struct PySplit {
    inner: SplitSpec,
}

#[pymethods]
impl PySplit {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySplit {
            inner: load_split(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_split(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn seen(&self) -> Vec<(usize, usize, usize)> {
        classes(&self.inner.seen)
    }
    #[getter]
    fn unseen(&self) -> Vec<(usize, usize, usize)> {
        classes(&self.inner.unseen)
    }
    #[getter]
    fn train(&self) -> Vec<String> {
        self.inner.train.clone()
    }
    #[getter]
    fn test(&self) -> Vec<String> {
        self.inner.test.clone()
    }
    #[getter]
    fn discarded(&self) -> Vec<String> {
        self.inner.discarded.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Split(train={}, test={}, discarded={}, unseen={})",
            self.inner.train.len(),
            self.inner.test.len(),
            self.inner.discarded.len(),
            self.inner.unseen.len()
        )
    }
}

/// A synthetic corpus on disk.
#[pyclass(name = "Corpus", module = "dds_py", frozen, skip_from_py_object)]
struct PyCorpus {
    inner: Corpus,
}

impl PyCorpus {
    fn samples(&self, ids: &[String]) -> PyResult<Vec<VideoSample>> {
        self.inner.samples(ids).map_err(to_py)
    }
}

#[pymethods]
impl PyCorpus {
    #[new]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: Corpus::open(&path).map_err(to_py)?,
        })
    }

    /// Writes a new corpus to `out` and opens it.
    #[staticmethod]
    #[pyo3(signature = (out, seed=0, num_videos=240, frames_per_video=8, image_size=32, subject_fixed=false))]
    fn generate(
        out: PathBuf,
        seed: u64,
        num_videos: usize,
        frames_per_video: usize,
        image_size: usize,
        subject_fixed: bool,
    ) -> PyResult<Self> {
        let cfg = GenConfig {
            num_videos,
            frames_per_video,
            image_size,
            subject_fixed,
            ..GenConfig::default()
        };
        write_corpus(&out, &cfg, seed).map_err(to_py)?;
        Self::open(out)
    }

    #[getter]
    fn video_ids(&self) -> Vec<String> {
        self.inner.annotations.videos.iter().map(|v| v.id.clone()).collect()
    }
    #[getter]
    fn object_names(&self) -> Vec<String> {
        self.inner.header.object_names.clone()
    }
    #[getter]
    fn relation_names(&self) -> Vec<String> {
        self.inner.header.relation_names.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.annotations.videos.len()
    }

    /// Per-frame lists of annotated triplets.
    fn annotations<'py>(&self, py: Python<'py>, video: &str) -> PyResult<Bound<'py, PyList>> {
        let v = self
            .inner
            .annotations
            .videos
            .iter()
            .find(|v| v.id == video)
            .ok_or_else(|| PyValueError::new_err(format!("no video {video:?}")))?;
        let out = PyList::empty(py);
        for f in &v.frames {
            out.append(frame_to_py(py, f)?)?;
        }
        Ok(out)
    }

    /// Frames of a video as nested `[channel][row][column]` lists.
    fn frames(&self, video: &str) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let s = self.samples(&[video.to_string()])?;
        Ok(s[0].frames.iter().map(image_to_nested).collect())
    }

    #[pyo3(signature = (holdout_count=8, seed=0, test_fraction=0.2))]
    fn make_split(&self, holdout_count: usize, seed: u64, test_fraction: f64) -> PyResult<PySplit> {
        let cfg = SplitConfig {
            test_fraction,
            ..SplitConfig::default()
        };
        let spec = make_compositional_split(&self.inner.annotations, &Holdout::Count(holdout_count), &cfg, seed)
            .map_err(to_py)?;
        Ok(PySplit { inner: spec })
    }
}

fn image_to_nested(im: &Image) -> Vec<Vec<Vec<f64>>> {
    let (c, h, w) = (im.channels, im.height, im.width);
    (0..c)
        .map(|k| (0..h).map(|y| (0..w).map(|x| im.get(k, y, x)).collect()).collect())
        .collect()
}

fn nested_to_image(v: &[Vec<Vec<f64>>]) -> PyResult<Image> {
    let c = v.len();
    let h = v.first().map_or(0, Vec::len);
    let w = v.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let mut im = Image::zeros(c, h, w);
    for (k, plane) in v.iter().enumerate() {
        if plane.len() != h || plane.iter().any(|r| r.len() != w) {
            return Err(PyValueError::new_err("frames must be rectangular [channel][row][column] lists"));
        }
        for (y, row) in plane.iter().enumerate() {
            for (x, &p) in row.iter().enumerate() {
                im.set(k, y, x, p);
            }
        }
    }
    Ok(im)
}

/// The detector.
#[pyclass(name = "Model", module = "dds_py", frozen, skip_from_py_object)]
struct PyModel {
    inner: Dds,
}

#[pymethods]
impl PyModel {
    /// Desk-scale model; `tiny` selects the 16x16-frame test size.
    #[new]
    #[pyo3(signature = (num_objects=8, num_relations=7, seed=0, tiny=false))]
    fn new(num_objects: usize, num_relations: usize, seed: u64, tiny: bool) -> PyResult<Self> {
        let cfg = if tiny {
            ModelConfig::tiny(num_objects, num_relations)
        } else {
            ModelConfig {
                num_objects,
                num_relations,
                ..ModelConfig::default()
            }
        };
        Ok(PyModel {
            inner: Dds::new(cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(checkpoint: PathBuf) -> PyResult<Self> {
        let (inner, _, _) = load_checkpoint(&checkpoint).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params().scalar_count()
    }

    /// Model configuration as a dict.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::to_value(self.inner.config()).map_err(|e| to_py(e.into()))?;
        json_to_py(py, &v)
    }

    /// Top-`k` triplets per frame of a clip given as nested
    /// `[frame][channel][row][column]` lists.
    #[pyo3(signature = (frames, k=20))]
    fn predict<'py>(&self, py: Python<'py>, frames: Vec<Vec<Vec<Vec<f64>>>>, k: usize) -> PyResult<Bound<'py, PyList>> {
        let images = frames.iter().map(|f| nested_to_image(f)).collect::<PyResult<Vec<_>>>()?;
        let video = VideoSample {
            id: String::new(),
            annotations: vec![FrameAnnotation::default(); images.len()],
            frames: images,
        };
        let preds = py.detach(|| predict_video(&self.inner, &video, k)).map_err(to_py)?;
        let out = PyList::empty(py);
        for frame in &preds {
            let l = PyList::empty(py);
            for p in frame {
                l.append(prediction_to_py(py, p)?)?;
            }
            out.append(l)?;
        }
        Ok(out)
    }

    /// Evaluates one side of a split and returns the report as a dict.
    #[pyo3(signature = (corpus, split, videos="test", recall_ks=vec![20, 50]))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        corpus: PyRef<'_, PyCorpus>,
        split: PyRef<'_, PySplit>,
        videos: &str,
        recall_ks: Vec<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let ids = match videos {
            "test" => &split.inner.test,
            "train" => &split.inner.train,
            other => return Err(PyValueError::new_err(format!("videos must be 'train' or 'test', got {other:?}"))),
        };
        let samples = corpus.samples(ids)?;
        let opts = EvalOptions {
            recall_ks,
            ..EvalOptions::default()
        };
        let spec = &split.inner;
        let ev = py
            .detach(|| evaluate_videos(&self.inner, &samples, Some(spec), &opts))
            .map_err(to_py)?;
        let v = serde_json::to_value(&ev.report).map_err(|e| to_py(e.into()))?;
        json_to_py(py, &v)
    }
}

/// Runs a `dds` command line, e.g. `run(["train", "--config", "run.toml"])`,
/// and returns its output lines.
#[pyfunction]
fn run(py: Python<'_>, args: Vec<String>) -> PyResult<Vec<String>> {
    let argv: Vec<String> = std::iter::once("dds".to_string()).chain(args).collect();
    py.detach(|| dds_core::cli::run_args(argv)).map_err(to_py)
}

#[pymodule]
pub fn dds_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(relation_region, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_match, m)?)?;
    m.add_function(wrap_pyfunction!(relations, m)?)?;
    m.add_function(wrap_pyfunction!(relation_names, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
