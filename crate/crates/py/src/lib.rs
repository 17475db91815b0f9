//! Python bindings for `dualex`.
//!
//! Images cross the boundary as flat row-major lists of floats together
//! with a `(channels, height, width)` shape.

use std::path::PathBuf;

use dualex::explain::{self, AugmentationSpec, DualExplainer, ExplanationMap, Explainer, GradientExplainer, NaiveExplainer};
use dualex::metrics::{self, BinaryMask};
use dualex::nn::weights::{load_model, LoadedModel};
use dualex::synth::{self, DatasetSpec};
use dualex::{Image, Provenance, Shape, Tensor};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: dualex::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn image(values: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<Image> {
    Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2), values).map_err(err)
}

fn shape_of(t: &Image) -> (usize, usize, usize) {
    (t.channels(), t.height(), t.width())
}

/// A 2-D explanation map.
#[pyclass(name = "ExplanationMap", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMap(ExplanationMap);

#[pymethods]
impl PyMap {
    #[new]
    fn new(height: usize, width: usize, values: Vec<f64>) -> PyResult<Self> {
        ExplanationMap::new(height, width, values, Provenance::Dual).map(PyMap).map_err(err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.0.provenance().to_string()
    }

    fn __repr__(&self) -> String {
        format!("ExplanationMap({}x{}, {})", self.0.height(), self.0.width(), self.0.provenance())
    }
}

/// One labelled sample of a synthetic dataset.
#[pyclass(name = "Sample", frozen, get_all)]
pub struct PySample {
    id: String,
    label: u8,
    shape: (usize, usize, usize),
    pixels: Vec<f64>,
    /// `(row0, col0, row1, col1)` with exclusive ends.
    boxes: Vec<[usize; 4]>,
}

#[pyclass(name = "Dataset", frozen)]
pub struct PyDataset(synth::Dataset);

#[pymethods]
impl PyDataset {
    /// Generates a dataset; unspecified fields keep their defaults.
    #[staticmethod]
    #[pyo3(signature = (count=2000, height=32, width=32, channels=1, pathological_fraction=0.45, seed=0))]
    fn generate(count: usize, height: usize, width: usize, channels: usize, pathological_fraction: f64, seed: u64) -> PyResult<Self> {
        let spec = DatasetSpec { count, height, width, channels, pathological_fraction, seed, ..DatasetSpec::default() };
        synth::generate_dataset(&spec).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        synth::load_dataset(&path).map(PyDataset).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        synth::save_dataset(&self.0, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn pathological(&self) -> usize {
        self.0.pathological()
    }

    fn sample(&self, index: usize) -> PyResult<PySample> {
        let s = self.0.samples.get(index).ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(index))?;
        Ok(PySample {
            id: s.id.clone(),
            label: s.label,
            shape: shape_of(&s.image),
            pixels: s.image.data().to_vec(),
            boxes: s.boxes.iter().map(|&b| b.into()).collect(),
        })
    }

    /// Ground-truth mask of sample `index` as a flat list of booleans.
    fn gt_mask(&self, index: usize) -> PyResult<Vec<bool>> {
        let s = self.0.samples.get(index).ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(index))?;
        Ok(synth::gt_mask(&s.boxes, s.image.height(), s.image.width()).bits().to_vec())
    }
}

/// A trained classifier loaded from a weight file.
#[pyclass(name = "Classifier", frozen)]
pub struct PyClassifier(dualex::ClassifierNet);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match load_model(&path).map_err(err)? {
            LoadedModel::Classifier(c) => Ok(PyClassifier(c)),
            _ => Err(PyValueError::new_err(format!("{} does not hold a classifier", path.display()))),
        }
    }

    fn score(&self, pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
        self.0.score(&image(pixels, shape)?).map_err(err)
    }

    fn saliency(&self, pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<PyMap> {
        GradientExplainer(&self.0).explain(&image(pixels, shape)?).map(PyMap).map_err(err)
    }
}

/// A trained pair of similar/adversarial generators.
#[pyclass(name = "GeneratorPair", frozen)]
pub struct PyPair(dualex::GeneratorPair);

#[pymethods]
impl PyPair {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match load_model(&path).map_err(err)? {
            LoadedModel::Pair(p) => Ok(PyPair(p)),
            _ => Err(PyValueError::new_err(format!("{} does not hold a generator pair", path.display()))),
        }
    }

    #[getter]
    fn mode(&self) -> String {
        self.0.mode().to_string()
    }

    /// `(x_s, x_a)` as flat lists.
    fn forward(&self, pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (xs, xa) = self.0.forward(&image(pixels, shape)?).map_err(err)?;
        Ok((xs.into_vec(), xa.into_vec()))
    }

    /// `|x_s − x_a|`, optionally averaged over `augment` random transforms.
    #[pyo3(signature = (pixels, shape, augment=0, seed=0))]
    fn explain(&self, pixels: Vec<f64>, shape: (usize, usize, usize), augment: usize, seed: u64) -> PyResult<PyMap> {
        let x = image(pixels, shape)?;
        let spec = AugmentationSpec { n: augment, ..AugmentationSpec::default() };
        explain::explain_with(&DualExplainer(&self.0), &x, (augment > 0).then_some((&spec, seed))).map(PyMap).map_err(err)
    }

    /// `|x − x_a|` using the adversarial branch alone.
    fn explain_naive(&self, pixels: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<PyMap> {
        NaiveExplainer(&self.0).explain(&image(pixels, shape)?).map(PyMap).map_err(err)
    }
}

fn mask(bits: Vec<bool>, height: usize, width: usize) -> PyResult<BinaryMask> {
    BinaryMask::from_bits(height, width, bits).map_err(err)
}

#[pyfunction]
fn threshold_at_percentile(map: &PyMap, p: u32) -> PyResult<Vec<bool>> {
    if !(1..=100).contains(&p) {
        return Err(PyValueError::new_err(format!("percentile {p} outside 1..=100")));
    }
    Ok(metrics::threshold_at_percentile(&map.0, p).bits().to_vec())
}

#[pyfunction]
fn iou(m_e: Vec<bool>, m_gt: Vec<bool>, height: usize, width: usize) -> PyResult<f64> {
    metrics::iou(&mask(m_e, height, width)?, &mask(m_gt, height, width)?).map_err(err)
}

/// Total (1..100) or partial (80..100) area under the localization PR curve.
#[pyfunction]
#[pyo3(signature = (map, gt, partial=false))]
fn auc_loc(map: &PyMap, gt: Vec<bool>, partial: bool) -> PyResult<f64> {
    let range = if partial { metrics::PARTIAL_RANGE } else { metrics::TOTAL_RANGE };
    metrics::auc_loc(&map.0, &mask(gt, map.0.height(), map.0.width())?, range).map_err(err)
}

#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    metrics::psnr(&image(a, shape)?, &image(b, shape)?).map_err(err)
}

#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    metrics::ssim(&image(a, shape)?, &image(b, shape)?).map_err(err)
}

#[pyfunction]
fn roc_auc(labels: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    metrics::roc_auc(&labels, &scores).map_err(err)
}

/// Names of the built-in loss-weight presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    dualex::config::PRESETS.iter().map(|p| p.name).collect()
}

/// Runs the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| dualex::cli::run(std::iter::once("dualex".to_string()).chain(args)))
}

#[pymodule]
fn dualex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMap>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyPair>()?;
    m.add_function(wrap_pyfunction!(threshold_at_percentile, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(auc_loc, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
