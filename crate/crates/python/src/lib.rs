//! Python bindings: model configs, weights, images, metrics, training and
//! gradient checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use mbt_core::data::{make_lr, synth_dataset as core_synth, Image, PairDataset};
use mbt_core::infer::infer_image;
use mbt_core::metrics::{self, baseline_upscale, ColorSpace, MetricOptions, MetricReport};
use mbt_core::model::{init_weights, module_param_counts, param_count, ModelConfig, ParamTree, MODEL_KEYS};
use mbt_core::ops::ResampleMode;
use mbt_core::train::{Checkpoint, TrainConfig, Trainer as CoreTrainer};
use mbt_core::verify::{check_block, Block, GradcheckOptions};
use mbt_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NonFinite(m) => PyArithmeticError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for Result<T, Error> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// Default configuration, with keyword overrides (e.g. scale=2).
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ModelConfig::default();
        apply(&mut inner, overrides)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (scale=2, **overrides))]
    fn tiny(scale: usize, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ModelConfig::tiny(scale);
        apply(&mut inner, overrides)?;
        Ok(Self { inner })
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown model key '{key}'")))
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value_text(value)?).py()
    }

    fn to_dict(&self) -> Vec<(String, String)> {
        MODEL_KEYS.iter().map(|k| (k.to_string(), self.inner.get(k).unwrap())).collect()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    fn param_count(&self) -> usize {
        param_count(&self.inner)
    }

    fn module_param_counts(&self) -> Vec<(String, usize)> {
        module_param_counts(&self.inner)
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let kv: Vec<String> = self.to_dict().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("ModelConfig({})", kv.join(", "))
    }
}

/// Python values as config text; lists become comma-separated.
fn value_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(items) = v.extract::<Vec<usize>>() {
        return Ok(items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","));
    }
    if let Ok(b) = v.extract::<bool>() {
        return Ok(b.to_string());
    }
    Ok(v.str()?.to_string())
}

fn apply(cfg: &mut ModelConfig, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            cfg.set(&k.extract::<String>()?, &value_text(&v)?).py()?;
        }
    }
    cfg.validate().py()
}

/// 8-bit RGB image.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: Image,
}

#[pymethods]
impl PyImage {
    /// Interleaved RGB bytes, row-major.
    #[new]
    fn new(width: usize, height: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: Image::new(width, height, data).py()? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Image::read(&path).py()? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.data())
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<(u8, u8, u8)> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) outside image")));
        }
        let [r, g, b] = self.inner.pixel(x, y);
        Ok((r, g, b))
    }

    fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.crop(left, top, width, height).py()? })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Model configuration plus float32 weights.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    config: ModelConfig,
    params: ParamTree<f32>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized weights.
    #[new]
    #[pyo3(signature = (config, seed=0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self { config: config.inner.clone(), params: init_weights(&config.inner, seed).py()? })
    }

    /// Weights from a checkpoint; the EMA shadow unless `live` is set.
    #[staticmethod]
    #[pyo3(signature = (path, live=false))]
    fn load(path: PathBuf, live: bool) -> PyResult<Self> {
        let ckpt = Checkpoint::<f32>::load(&path).py()?;
        ckpt.check_layout().py()?;
        Ok(Self { params: ckpt.inference_params(!live).clone(), config: ckpt.model })
    }

    /// Writes a weights-only checkpoint.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::weights_only(self.config.clone(), self.params.clone()).save(&path).py()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.config.clone() }
    }

    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn names(&self) -> Vec<String> {
        self.params.names().map(String::from).collect()
    }

    /// Shape and flat values of one parameter tensor.
    fn get(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter '{name}'")))?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    fn set(&mut self, name: &str, values: Vec<f32>) -> PyResult<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter '{name}'")))?;
        if values.len() != t.numel() {
            return Err(PyValueError::new_err(format!(
                "'{name}' holds {} values, got {}",
                t.numel(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(&values);
        Ok(())
    }

    /// Super-resolves an image of any size (reflection-padded internally).
    fn upscale(&self, py: Python<'_>, image: &PyImage) -> PyResult<PyImage> {
        let img = image.inner.clone();
        let out = py.detach(|| infer_image(&self.params, &self.config, &img)).py()?;
        Ok(PyImage { inner: out })
    }

    /// Metric report over a dataset directory.
    #[pyo3(signature = (data_dir, shave=0, y_channel=false))]
    fn evaluate<'py>(&self, py: Python<'py>, data_dir: PathBuf, shave: usize, y_channel: bool) -> PyResult<Bound<'py, PyDict>> {
        let data = PairDataset::load(&data_dir, self.config.scale).py()?;
        let opts = options(shave, y_channel);
        let report = py.detach(|| metrics::evaluate(&self.params, &self.config, &data, &opts)).py()?;
        report_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model(params={}, scale={})", self.params.num_params(), self.config.scale)
    }
}

fn options(shave: usize, y_channel: bool) -> MetricOptions {
    MetricOptions { shave, color: if y_channel { ColorSpace::Y } else { ColorSpace::Rgb } }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_psnr", r.mean_psnr)?;
    d.set_item("mean_ssim", r.mean_ssim)?;
    let images: Vec<(String, f64, f64)> = r.images.iter().map(|i| (i.id.clone(), i.psnr, i.ssim)).collect();
    d.set_item("images", images)?;
    let classes: Vec<(String, usize, f64, f64)> =
        r.classes.iter().map(|c| (c.class.clone(), c.count, c.psnr, c.ssim)).collect();
    d.set_item("classes", classes)?;
    Ok(d)
}

/// Trainer over datasets loaded from disk. Between epochs the state lives in
/// a checkpoint, so `save` at any epoch boundary resumes exactly.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    train: TrainConfig,
    data: PairDataset,
    val: Option<PairDataset>,
    state: Checkpoint<f32>,
}

#[pymethods]
impl PyTrainer {
    /// `options` are training keys (batch_size, epochs, lr, ...). Passing
    /// `resume` continues from a saved checkpoint instead of `config`.
    #[new]
    #[pyo3(signature = (config, train_dir, val_dir=None, resume=None, **options))]
    fn new(
        config: &PyModelConfig,
        train_dir: PathBuf,
        val_dir: Option<PathBuf>,
        resume: Option<PathBuf>,
        options: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut train = TrainConfig::default();
        if let Some(d) = options {
            for (k, v) in d.iter() {
                train.set(&k.extract::<String>()?, &value_text(&v)?).py()?;
            }
        }
        let data = PairDataset::load(&train_dir, config.inner.scale).py()?;
        let val = val_dir.map(|d| PairDataset::load(&d, config.inner.scale)).transpose().py()?;
        let state = match resume {
            Some(p) => {
                let c = Checkpoint::<f32>::load(&p).py()?;
                if c.model != config.inner {
                    return Err(PyValueError::new_err("checkpoint model config differs from `config`"));
                }
                CoreTrainer::resume(c, train.clone(), &data, val.as_ref()).py()?.checkpoint()
            }
            None => CoreTrainer::new(config.inner.clone(), train.clone(), &data, val.as_ref()).py()?.checkpoint(),
        };
        Ok(Self { train, data, val, state })
    }

    /// Runs one epoch; returns its record as a dict.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let mut t = CoreTrainer::resume(self.state.clone(), self.train.clone(), &self.data, self.val.as_ref()).py()?;
        if t.done() {
            return Err(PyValueError::new_err("all epochs completed"));
        }
        let rec = t.run_epoch().py()?;
        self.state = t.checkpoint();
        let d = PyDict::new(py);
        d.set_item("epoch", rec.epoch)?;
        d.set_item("lr", rec.lr)?;
        d.set_item("steps", rec.steps)?;
        d.set_item("mean_loss", rec.mean_loss)?;
        d.set_item("val_psnr", rec.val_psnr)?;
        Ok(d)
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.state.epoch
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.epoch as usize >= self.train.epochs
    }

    /// Per-step training losses so far.
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.state.losses.clone()
    }

    #[pyo3(signature = (ema=true))]
    fn model(&self, ema: bool) -> PyModel {
        PyModel { config: self.state.model.clone(), params: self.state.inference_params(ema).clone() }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save(&path).py()
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, shave=0, y_channel=false))]
fn psnr(a: &PyImage, b: &PyImage, shave: usize, y_channel: bool) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner, &options(shave, y_channel)).py()
}

#[pyfunction]
#[pyo3(signature = (a, b, shave=0, y_channel=false))]
fn ssim(a: &PyImage, b: &PyImage, shave: usize, y_channel: bool) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner, &options(shave, y_channel)).py()
}

/// Bicubic downsampling used to synthesize LR inputs.
#[pyfunction]
fn downscale(hr: &PyImage, scale: usize) -> PyResult<PyImage> {
    Ok(PyImage { inner: make_lr(&hr.inner, scale).py()? })
}

/// Plain interpolation upscale, "bicubic" or "bilinear", in float32 like
/// the model.
#[pyfunction]
#[pyo3(signature = (lr, scale, mode="bicubic"))]
fn interpolate(lr: &PyImage, scale: usize, mode: &str) -> PyResult<PyImage> {
    let mode = match mode {
        "bicubic" => ResampleMode::Bicubic,
        "bilinear" => ResampleMode::Bilinear,
        m => return Err(PyValueError::new_err(format!("unknown mode '{m}'"))),
    };
    Ok(PyImage { inner: baseline_upscale::<f32>(&lr.inner, scale, mode).py()? })
}

/// Writes `hr/`, `lr_x{scale}/` and a manifest under `out`; returns the ids.
#[pyfunction]
#[pyo3(signature = (out, count=16, size=128, scale=4, seed=0))]
fn synth_dataset(out: PathBuf, count: usize, size: usize, scale: usize, seed: u64) -> PyResult<Vec<String>> {
    let d = core_synth(count, size, scale, seed).py()?;
    d.save(&out).py()?;
    Ok(d.pairs().iter().map(|p| p.id.clone()).collect())
}

/// Float64 finite-difference check of one block: (passed, max relative
/// error, [(group, checked, relative error)]).
#[pyfunction]
#[pyo3(signature = (block, seed=0, samples=16))]
fn gradcheck(py: Python<'_>, block: &str, seed: u64, samples: usize) -> PyResult<(bool, f64, Vec<(String, usize, f64)>)> {
    let block: Block = block.parse().py()?;
    let opts = GradcheckOptions { seed, samples_per_tensor: samples, ..Default::default() };
    let r = py.detach(|| check_block(block, &opts)).py()?;
    let groups = r.groups.iter().map(|g| (g.name.clone(), g.checked, g.rel_error)).collect();
    Ok((r.passed(), r.max_error(), groups))
}

#[pymodule]
fn mbt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(downscale, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("BLOCKS", Block::ALL.iter().map(|b| b.name()).collect::<Vec<_>>())?;
    Ok(())
}
