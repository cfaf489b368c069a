//! Fine-tuning loop and evaluation: Adam over categorical cross-entropy,
//! per-epoch train/test histories, and label prediction.
//!
//! Images are decoded, resized to the model's input and channel-fixed once up
//! front; each epoch then shuffles indices (seeded), normalizes batches under
//! the run's preprocess mode, and applies one optimizer step per batch. The
//! recorded train metrics are the sample-weighted means over the epoch's
//! batches; eval metrics come from a full inference pass after the epoch.
//! Everything is single-threaded, so runs are reproducible from the seed.

mod adam;

pub use adam::{Adam, AdamParams};

use crate::dataset::{load_image, DatasetError, DatasetManifest};
use crate::models::{Model, ModelError};
use crate::nn::{softmax_cross_entropy, Scalar, TensorRole};
use crate::preprocess::{
    ensure_three_channels, preprocess_batch_hw, resize_bilinear, ImageBuffer, PreprocessError,
    PreprocessMode,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}; training aborted")]
    NonFiniteLoss { epoch: usize, history: EpochHistory },
    #[error("train and eval sets overlap on id {id}")]
    OverlappingSets { id: String },
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// The only loss this harness trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CategoricalCrossEntropy,
}

/// Optimization regime: Adam, fixed learning rate, fixed epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub optimizer: AdamParams,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            shuffle: true,
            optimizer: AdamParams::default(),
            loss: LossKind::CategoricalCrossEntropy,
        }
    }
}

/// Per-epoch train/test loss and accuracy series, indexed from epoch 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
}

impl EpochHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }

    fn push(&mut self, train_loss: f64, train_acc: f64, test_loss: f64, test_acc: f64) {
        self.train_loss.push(train_loss);
        self.train_accuracy.push(train_acc);
        self.test_loss.push(test_loss);
        self.test_accuracy.push(test_acc);
    }

    /// `epoch,train_loss,train_acc,test_loss,test_acc` rows, epoch from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_loss,test_acc\n");
        for e in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                self.train_loss[e],
                self.train_accuracy[e],
                self.test_loss[e],
                self.test_accuracy[e]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut history = EpochHistory::default();
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty history csv")?;
        if header.trim() != "epoch,train_loss,train_acc,test_loss,test_acc" {
            return Err(format!("unexpected header {header:?}"));
        }
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(format!("row {} has {} fields", i + 1, fields.len()));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            history.train_loss.push(parse(fields[1])?);
            history.train_accuracy.push(parse(fields[2])?);
            history.test_loss.push(parse(fields[3])?);
            history.test_accuracy.push(parse(fields[4])?);
        }
        Ok(history)
    }
}

/// A fine-tuned model with its full training record.
pub struct TrainedModel<F: Scalar = f32> {
    pub model: Model<F>,
    pub history: EpochHistory,
    pub config: TrainConfig,
    pub wall_time: f64,
    pub steps: u64,
}

struct LoadedSet {
    images: Vec<ImageBuffer>,
    labels: Vec<usize>,
}

/// Decode, resize and channel-fix every record once.
fn load_set(manifest: &DatasetManifest, h: usize, w: usize) -> Result<LoadedSet, TrainError> {
    if manifest.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut images = Vec::with_capacity(manifest.len());
    let mut labels = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        let label = record.label.ok_or_else(|| DatasetError::Unlabeled {
            id: record.id.clone(),
        })?;
        let img = load_image(record)?;
        let img = resize_bilinear(&img, h, w)?;
        let img = ensure_three_channels(&img)?;
        images.push(img);
        labels.push(label as usize);
    }
    Ok(LoadedSet { images, labels })
}

/// Argmax per row with ties broken by the lowest class index.
pub fn labels_from_probabilities<F: Scalar>(probs: &Array2<F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Per-sample cross-entropy from logits, computed in f64.
fn per_sample_losses<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row
                .iter()
                .map(|&v| (v - max).to_f64_().exp())
                .sum::<f64>()
                .ln();
            -((row[label] - max).to_f64_() - lse)
        })
        .collect()
}

/// One inference pass: per-sample losses and predictions, in dataset order.
fn eval_pass<F: Scalar>(
    model: &mut Model<F>,
    set: &LoadedSet,
    mode: &PreprocessMode,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<usize>), TrainError> {
    let (h, w) = (model.config.input_height, model.config.input_width);
    let mut losses = Vec::with_capacity(set.images.len());
    let mut preds = Vec::with_capacity(set.images.len());
    for chunk in set
        .images
        .chunks(batch_size.max(1))
        .zip(set.labels.chunks(batch_size.max(1)))
    {
        let (images, labels) = chunk;
        let batch = preprocess_batch_hw(images, mode, h, w)?;
        let x = model.batch_to_input(&batch)?;
        let logits = model.forward_logits(&x, false);
        losses.extend(per_sample_losses(&logits, labels));
        preds.extend(labels_from_probabilities(&logits));
    }
    Ok((losses, preds))
}

/// Mean cross-entropy and accuracy over the whole dataset. Independent of
/// `batch_size` up to floating-point noise well below 1e-6.
pub fn evaluate_loss_acc<F: Scalar>(
    model: &mut Model<F>,
    dataset: &DatasetManifest,
    mode: &PreprocessMode,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let set = load_set(
        dataset,
        model.config.input_height,
        model.config.input_width,
    )?;
    let (losses, preds) = eval_pass(model, &set, mode, batch_size)?;
    Ok(summarize(&losses, &preds, &set.labels))
}

fn summarize(losses: &[f64], preds: &[usize], labels: &[usize]) -> (f64, f64) {
    let n = labels.len() as f64;
    let loss = losses.iter().sum::<f64>() / n;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    (loss, correct as f64 / n)
}

/// Ground-truth and predicted labels, parallel lists in dataset order.
pub fn predict_labels<F: Scalar>(
    model: &mut Model<F>,
    dataset: &DatasetManifest,
    mode: &PreprocessMode,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let set = load_set(
        dataset,
        model.config.input_height,
        model.config.input_width,
    )?;
    let (_, preds) = eval_pass(model, &set, mode, 64)?;
    Ok((set.labels, preds))
}

/// Fine-tune `model` on `train_set`, evaluating on `eval_set` after every
/// epoch. Deterministic given the seed (single-worker data order).
pub fn train<F: Scalar>(
    model: Model<F>,
    train_set: &DatasetManifest,
    eval_set: &DatasetManifest,
    config: &TrainConfig,
    mode: &PreprocessMode,
) -> Result<TrainedModel<F>, TrainError> {
    train_augmented(model, train_set, eval_set, config, mode, None)
}

/// [`train`] with an optional augmentation applied to every training image,
/// re-sampled each epoch with a seed derived from (run seed, epoch, sample).
/// Evaluation always sees clean images.
pub fn train_augmented<F: Scalar>(
    mut model: Model<F>,
    train_set: &DatasetManifest,
    eval_set: &DatasetManifest,
    config: &TrainConfig,
    mode: &PreprocessMode,
    augment_spec: Option<&crate::preprocess::AugmentSpec>,
) -> Result<TrainedModel<F>, TrainError> {
    let started = std::time::Instant::now();
    if let Some(id) = train_set
        .ids()
        .intersection(&eval_set.ids())
        .next()
    {
        return Err(TrainError::OverlappingSets {
            id: (*id).to_string(),
        });
    }
    let (h, w) = (model.config.input_height, model.config.input_width);
    let train_data = load_set(train_set, h, w)?;
    let eval_data = load_set(eval_set, h, w)?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut adam = Adam::<F>::new(config.learning_rate, config.optimizer);
    let mut history = EpochHistory::default();
    let n = train_data.images.len();
    let batch_size = config.batch_size.max(1);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_indices in order.chunks(batch_size) {
            let images: Vec<ImageBuffer> = batch_indices
                .iter()
                .map(|&i| match augment_spec {
                    Some(spec) => {
                        let sample_seed = config
                            .seed
                            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                            .wrapping_add((epoch as u64) << 32)
                            .wrapping_add(i as u64);
                        crate::preprocess::augment(&train_data.images[i], spec, sample_seed)
                            .map_err(TrainError::from)
                    }
                    None => Ok(train_data.images[i].clone()),
                })
                .collect::<Result<_, _>>()?;
            let labels: Vec<usize> = batch_indices.iter().map(|&i| train_data.labels[i]).collect();
            let batch = preprocess_batch_hw(&images, mode, h, w)?;
            let x = model.batch_to_input(&batch)?;
            let logits = model.forward_logits(&x, true);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, history });
            }
            loss_sum += loss * labels.len() as f64;
            correct += labels_from_probabilities(&logits)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            model.zero_grads();
            model.backward_from_logits(&dlogits);
            adam.begin_step();
            model.visit_tensors(&mut |name, role, p| {
                if role == TensorRole::Trainable {
                    adam.update(name, p);
                }
            });
        }
        let train_loss = loss_sum / n as f64;
        let train_acc = correct as f64 / n as f64;
        let (eval_losses, eval_preds) = eval_pass(&mut model, &eval_data, mode, batch_size)?;
        let (test_loss, test_acc) = summarize(&eval_losses, &eval_preds, &eval_data.labels);
        history.push(train_loss, train_acc, test_loss, test_acc);
    }

    Ok(TrainedModel {
        model,
        history,
        config: config.clone(),
        wall_time: started.elapsed().as_secs_f64(),
        steps: adam.steps(),
    })
}
