//! Python bindings for the digit-recognition benchmark harness: dataset
//! manifests and splits, batch preprocessing, model building/inference,
//! training, and classification reports.

use ndarray::Array2;
use numpy::{IntoPyArray, PyArray2, PyArray4, PyReadonlyArray3, PyReadonlyArray4};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::{Path, PathBuf};

use numtabench::dataset::{self, DatasetManifest, SourceTag, SplitSpec};
use numtabench::metrics;
use numtabench::models::{self, BackboneKind, Model, ModelConfig, WeightInit};
use numtabench::preprocess::{self, ImageBuffer, ModeKind, PreprocessMode, TensorBatch};
use numtabench::report;
use numtabench::training::{self, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<PreprocessMode> {
    let kind: ModeKind = mode.parse().map_err(value_err)?;
    Ok(PreprocessMode::from_kind(kind))
}

fn parse_tags(tags: &str) -> PyResult<Vec<SourceTag>> {
    tags.chars()
        .map(|c| SourceTag::new(c).map_err(value_err))
        .collect()
}

/// Ordered inventory of labeled image records.
#[pyclass(name = "Manifest")]
struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DatasetManifest::load_json(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Map label -> record count.
    fn class_counts(&self) -> std::collections::BTreeMap<u8, usize> {
        self.inner.class_counts()
    }

    /// Map source tag -> record count.
    fn provenance(&self) -> std::collections::BTreeMap<char, usize> {
        self.inner
            .provenance()
            .into_iter()
            .map(|(tag, count)| (tag.as_char(), count))
            .collect()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records.iter().map(|r| r.id.clone()).collect()
    }

    fn labels(&self) -> Vec<Option<u8>> {
        self.inner.records.iter().map(|r| r.label).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    fn __repr__(&self) -> String {
        format!("Manifest({} records)", self.inner.len())
    }
}

/// Scan `training-<t>.csv` + `training-<t>/` under `root` for each tag in
/// `tags` (e.g. "abc").
#[pyfunction]
fn scan_sources(root: PathBuf, tags: &str) -> PyResult<PyManifest> {
    let tags = parse_tags(tags)?;
    Ok(PyManifest {
        inner: dataset::scan_sources(&root, &tags).map_err(value_err)?,
    })
}

/// Drop unlabeled / unreadable records; returns the cleaned manifest and a
/// dict with the drop accounting.
#[pyfunction]
fn validate_and_clean(
    py: Python<'_>,
    manifest: &PyManifest,
) -> PyResult<(PyManifest, Py<pyo3::types::PyDict>)> {
    let (clean, log) = dataset::validate_and_clean(&manifest.inner);
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("kept", log.kept)?;
    dict.set_item("dropped_missing_label", log.dropped_missing_label)?;
    dict.set_item("dropped_missing_file", log.dropped_missing_file)?;
    dict.set_item("dropped_unreadable", log.dropped_unreadable)?;
    Ok((PyManifest { inner: clean }, dict.unbind()))
}

/// Stratified subsample of exactly `n` records, deterministic in `seed`.
#[pyfunction]
fn subsample(manifest: &PyManifest, n: usize, seed: u64) -> PyResult<PyManifest> {
    Ok(PyManifest {
        inner: dataset::subsample(&manifest.inner, n, seed).map_err(value_err)?,
    })
}

/// Deterministic stratified split into (train, test, new_data).
#[pyfunction]
#[pyo3(signature = (manifest, seed=0, train_fraction=0.8, newdata_fraction=0.5, stratified=true))]
fn stratified_split(
    manifest: &PyManifest,
    seed: u64,
    train_fraction: f64,
    newdata_fraction: f64,
    stratified: bool,
) -> PyResult<(PyManifest, PyManifest, PyManifest)> {
    let spec = SplitSpec {
        seed,
        train_fraction,
        newdata_fraction,
        stratified,
    };
    let result = dataset::stratified_split(&manifest.inner, &spec).map_err(value_err)?;
    Ok((
        PyManifest { inner: result.train },
        PyManifest { inner: result.test },
        PyManifest {
            inner: result.new_data,
        },
    ))
}

fn images_from_u8_nhwc(array: &PyReadonlyArray4<'_, u8>) -> PyResult<Vec<ImageBuffer>> {
    let view = array.as_array();
    let (n, h, w, c) = view.dim();
    if c != 1 && c != 3 {
        return Err(PyValueError::new_err(format!(
            "channel count must be 1 or 3, got {c}"
        )));
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(view[[i, y, x, ch]]);
                }
            }
        }
        images.push(ImageBuffer::new(h, w, c, data));
    }
    Ok(images)
}

/// Normalize a uint8 NHWC batch under `mode` ("caffe" | "tf" | "torch");
/// returns a float32 NHWC array. Images must be 3-channel.
#[pyfunction]
fn preprocess_images<'py>(
    py: Python<'py>,
    images: PyReadonlyArray4<'py, u8>,
    mode: &str,
) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let mode = parse_mode(mode)?;
    let buffers = images_from_u8_nhwc(&images)?;
    let (h, w) = match buffers.first() {
        Some(img) => (img.height(), img.width()),
        None => return Err(PyValueError::new_err("empty batch")),
    };
    let batch = preprocess::preprocess_batch_hw(&buffers, &mode, h, w).map_err(value_err)?;
    let array = ndarray::Array4::from_shape_vec(
        (batch.n, batch.height, batch.width, batch.channels),
        batch.values,
    )
    .expect("batch dims consistent");
    Ok(array.into_pyarray(py))
}

/// Bilinear resize (corner-aligned-false) of one HxWxC uint8 image.
#[pyfunction]
fn resize_bilinear<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, u8>,
    out_h: usize,
    out_w: usize,
) -> PyResult<Bound<'py, numpy::PyArray3<u8>>> {
    let view = image.as_array();
    let (h, w, c) = view.dim();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(view[[y, x, ch]]);
            }
        }
    }
    let img = ImageBuffer::new(h, w, c, data);
    let resized = preprocess::resize_bilinear(&img, out_h, out_w).map_err(value_err)?;
    let array = ndarray::Array3::from_shape_vec(
        (out_h, out_w, c),
        resized.data().to_vec(),
    )
    .expect("resize dims consistent");
    Ok(array.into_pyarray(py))
}

fn tensor_batch_from_f32(array: &PyReadonlyArray4<'_, f32>) -> PyResult<TensorBatch> {
    let view = array.as_array();
    let (n, h, w, c) = view.dim();
    let mut values = Vec::with_capacity(n * h * w * c);
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    values.push(view[[i, y, x, ch]]);
                }
            }
        }
    }
    Ok(TensorBatch {
        n,
        height: h,
        width: w,
        channels: c,
        values,
    })
}

/// An adapted CNN backbone with a 10-class softmax head.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Option<Model<f32>>,
}

impl PyModel {
    fn get_mut(&mut self) -> PyResult<&mut Model<f32>> {
        self.inner
            .as_mut()
            .ok_or_else(|| PyValueError::new_err("model was consumed by a failed train call"))
    }
}

#[pymethods]
impl PyModel {
    /// Build a fresh model: kind is one of resnet50 | inceptionv3 |
    /// efficientnetb0 | desk_resnet | desk_inception | desk_efficientnet.
    #[staticmethod]
    #[pyo3(signature = (kind, seed=0, pretrained=None))]
    fn build(kind: &str, seed: u64, pretrained: Option<PathBuf>) -> PyResult<Self> {
        let kind: BackboneKind = kind.parse().map_err(value_err)?;
        let weight_init = match pretrained {
            Some(path) => WeightInit::Pretrained { path },
            None => WeightInit::Random { seed },
        };
        let config = ModelConfig {
            weight_init,
            ..ModelConfig::default()
        };
        Ok(Self {
            inner: Some(models::build_model(kind, config).map_err(value_err)?),
        })
    }

    /// Restore a checkpointed model.
    #[staticmethod]
    fn load(kind: &str, path: PathBuf) -> PyResult<Self> {
        let kind: BackboneKind = kind.parse().map_err(value_err)?;
        Ok(Self {
            inner: Some(models::load_checkpoint(kind, &path).map_err(io_err)?),
        })
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        self.get_mut()?.save_checkpoint(&path).map_err(io_err)
    }

    #[getter]
    fn kind(&self) -> PyResult<String> {
        Ok(self
            .inner
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model consumed"))?
            .kind
            .name()
            .to_string())
    }

    /// Probability rows for a preprocessed float32 NHWC batch (n, 96, 96, 3).
    fn forward<'py>(
        &mut self,
        py: Python<'py>,
        batch: PyReadonlyArray4<'py, f32>,
    ) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let tensor = tensor_batch_from_f32(&batch)?;
        let model = self.get_mut()?;
        let probs: Array2<f32> = model.forward_batch(&tensor).map_err(value_err)?;
        Ok(probs.into_pyarray(py))
    }

    /// (total, trainable) parameter counts.
    fn parameter_count(&mut self) -> PyResult<(u64, u64)> {
        let summary = self.get_mut()?.parameter_count();
        Ok((summary.total, summary.trainable))
    }

    /// All trainable parameter names, in traversal order.
    fn parameter_names(&mut self) -> PyResult<Vec<String>> {
        let summary = self.get_mut()?.parameter_count();
        Ok(summary.per_layer.into_keys().collect())
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            Some(m) => format!("Model(kind={})", m.kind),
            None => "Model(consumed)".into(),
        }
    }
}

/// Fine-tune a model in place on disk-backed manifests; returns the epoch
/// history as a dict of lists (train_loss / train_acc / test_loss / test_acc).
#[pyfunction]
#[pyo3(signature = (model, train_set, eval_set, epochs=20, learning_rate=1e-4, batch_size=32, seed=0, mode="caffe"))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: &mut PyModel,
    train_set: &PyManifest,
    eval_set: &PyManifest,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    mode: &str,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let mode = parse_mode(mode)?;
    let config = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let inner = model
        .inner
        .take()
        .ok_or_else(|| PyValueError::new_err("model consumed"))?;
    let outcome =
        training::train(inner, &train_set.inner, &eval_set.inner, &config, &mode)
            .map_err(value_err)?;
    model.inner = Some(outcome.model);
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("train_loss", outcome.history.train_loss)?;
    dict.set_item("train_acc", outcome.history.train_accuracy)?;
    dict.set_item("test_loss", outcome.history.test_loss)?;
    dict.set_item("test_acc", outcome.history.test_accuracy)?;
    dict.set_item("wall_time", outcome.wall_time)?;
    dict.set_item("steps", outcome.steps)?;
    Ok(dict.unbind())
}

/// Mean cross-entropy and accuracy of `model` on a manifest.
#[pyfunction]
#[pyo3(signature = (model, dataset, mode="caffe", batch_size=64))]
fn evaluate(
    model: &mut PyModel,
    dataset: &PyManifest,
    mode: &str,
    batch_size: usize,
) -> PyResult<(f64, f64)> {
    let mode = parse_mode(mode)?;
    training::evaluate_loss_acc(model.get_mut()?, &dataset.inner, &mode, batch_size)
        .map_err(value_err)
}

/// (y_true, y_pred) label lists for `model` on a manifest, dataset order.
#[pyfunction]
#[pyo3(signature = (model, dataset, mode="caffe"))]
fn predict_labels(
    model: &mut PyModel,
    dataset: &PyManifest,
    mode: &str,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let mode = parse_mode(mode)?;
    training::predict_labels(model.get_mut()?, &dataset.inner, &mode).map_err(value_err)
}

/// Per-class precision/recall/F1/support plus accuracy and macro/weighted
/// averages.
#[pyclass(name = "Report")]
struct PyReport {
    inner: metrics::ClassificationReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.accuracy
    }

    #[getter]
    fn macro_avg(&self) -> (f64, f64, f64) {
        let m = self.inner.macro_avg;
        (m.precision, m.recall, m.f1)
    }

    #[getter]
    fn weighted_avg(&self) -> (f64, f64, f64) {
        let m = self.inner.weighted_avg;
        (m.precision, m.recall, m.f1)
    }

    #[getter]
    fn total_support(&self) -> u64 {
        self.inner.total_support
    }

    /// Rows of (label, precision, recall, f1, support).
    fn per_class(&self) -> Vec<(usize, f64, f64, f64, u64)> {
        self.inner
            .per_class
            .iter()
            .map(|m| (m.label, m.precision, m.recall, m.f1, m.support))
            .collect()
    }

    /// Fixed-column text in the usual classification-report layout.
    #[pyo3(signature = (decimals=2))]
    fn render(&self, decimals: usize) -> String {
        metrics::render_report_text(&self.inner, decimals)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("report serializes")
    }

    fn __repr__(&self) -> String {
        format!("Report(accuracy={:.4})", self.inner.accuracy)
    }
}

/// Build a classification report from parallel label lists (classes 0–9).
#[pyfunction]
fn build_report(y_true: Vec<usize>, y_pred: Vec<usize>) -> PyResult<PyReport> {
    Ok(PyReport {
        inner: metrics::build_report(&y_true, &y_pred).map_err(value_err)?,
    })
}

/// First/last test accuracy of a series and their exact difference.
#[pyfunction]
fn epoch_delta(test_accuracy: Vec<f64>, name: &str) -> PyResult<(f64, f64, f64)> {
    let history = numtabench::training::EpochHistory {
        train_loss: vec![0.0; test_accuracy.len()],
        train_accuracy: vec![0.0; test_accuracy.len()],
        test_loss: vec![0.0; test_accuracy.len()],
        test_accuracy,
    };
    let delta = report::epoch_delta(&history, name).map_err(value_err)?;
    Ok((delta.accuracy_at_1, delta.accuracy_at_20, delta.difference))
}

/// Emit loss.png / accuracy.png / history.csv for a history dict of lists.
#[pyfunction]
fn render_plots(
    train_loss: Vec<f64>,
    train_acc: Vec<f64>,
    test_loss: Vec<f64>,
    test_acc: Vec<f64>,
    out_dir: PathBuf,
) -> PyResult<(PathBuf, PathBuf)> {
    let history = numtabench::training::EpochHistory {
        train_loss,
        train_accuracy: train_acc,
        test_loss,
        test_accuracy: test_acc,
    };
    report::render_plots(&history, Path::new(&out_dir)).map_err(io_err)
}

#[pymodule]
fn numtabench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(scan_sources, m)?)?;
    m.add_function(wrap_pyfunction!(validate_and_clean, m)?)?;
    m.add_function(wrap_pyfunction!(subsample, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_split, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_images, m)?)?;
    m.add_function(wrap_pyfunction!(resize_bilinear, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict_labels, m)?)?;
    m.add_function(wrap_pyfunction!(build_report, m)?)?;
    m.add_function(wrap_pyfunction!(epoch_delta, m)?)?;
    m.add_function(wrap_pyfunction!(render_plots, m)?)?;
    Ok(())
}
