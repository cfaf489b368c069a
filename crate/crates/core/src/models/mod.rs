//! Adapted CNN backbones with a 10-class head: build, run, count, checkpoint.
//!
//! Each backbone (ResNet-50, Inception-v3, EfficientNet-B0, and the reduced
//! desk variants) feeds global average pooling into a single dense softmax
//! head. Input is fixed at 96×96×3. Pretrained backbone weights can be loaded
//! from a tensor archive; the head is always freshly initialized.

mod archive;
pub mod desk;
pub mod efficientnet;
pub mod inception;
pub mod resnet;

pub use archive::{read_archive, side_record_path, write_archive, TensorEntry, FORMAT_VERSION};

/// Kernel std for the freshly initialized classifier head. Small so a new
/// model scores all ten classes nearly uniformly before any fine-tuning.
pub const HEAD_INIT_STD: f64 = 1e-3;

use crate::nn::{softmax_rows, Dense, Layer, Param, Scalar, Sequential, TensorRole};
use crate::preprocess::TensorBatch;
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported model kind {0:?}")]
    UnsupportedKind(String),
    #[error("archive error at {path}: {message}")]
    Archive { path: PathBuf, message: String },
    #[error("incompatible archive at {path}: {reason}")]
    IncompatibleArchive { path: PathBuf, reason: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// The six buildable backbones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Resnet50,
    Inceptionv3,
    Efficientnetb0,
    DeskResnet,
    DeskInception,
    DeskEfficientnet,
}

impl BackboneKind {
    pub fn all() -> [BackboneKind; 6] {
        [
            BackboneKind::Resnet50,
            BackboneKind::Inceptionv3,
            BackboneKind::Efficientnetb0,
            BackboneKind::DeskResnet,
            BackboneKind::DeskInception,
            BackboneKind::DeskEfficientnet,
        ]
    }

    /// Reduced variants used for fast tests, excluded from full-scale runs.
    pub fn is_desk(&self) -> bool {
        matches!(
            self,
            BackboneKind::DeskResnet | BackboneKind::DeskInception | BackboneKind::DeskEfficientnet
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackboneKind::Resnet50 => "resnet50",
            BackboneKind::Inceptionv3 => "inceptionv3",
            BackboneKind::Efficientnetb0 => "efficientnetb0",
            BackboneKind::DeskResnet => "desk_resnet",
            BackboneKind::DeskInception => "desk_inception",
            BackboneKind::DeskEfficientnet => "desk_efficientnet",
        }
    }

    /// Batch size used in the published runs: 64 for EfficientNet-B0, 32 for
    /// the others (desk variants follow their parent).
    pub fn default_batch_size(&self) -> usize {
        match self {
            BackboneKind::Efficientnetb0 | BackboneKind::DeskEfficientnet => 64,
            _ => 32,
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackboneKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::UnsupportedKind(s.to_string()))
    }
}

/// How parameters are initialized when a model is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    Random { seed: u64 },
    Pretrained { path: PathBuf },
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::Random { seed: 0 }
    }
}

/// Input/head geometry plus the weight-init policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub weight_init: WeightInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 96,
            input_width: 96,
            input_channels: 3,
            num_classes: 10,
            weight_init: WeightInit::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            weight_init: WeightInit::Random { seed },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_channels != 3 {
            return Err(ModelError::InvalidConfig(
                "backbones require 3 input channels".into(),
            ));
        }
        if self.num_classes == 0 {
            return Err(ModelError::InvalidConfig("num_classes must be ≥ 1".into()));
        }
        if self.input_height < 64 || self.input_width < 64 {
            return Err(ModelError::InvalidConfig(
                "input smaller than 64×64 collapses the deepest feature maps".into(),
            ));
        }
        Ok(())
    }
}

/// Exact per-tensor parameter counts. Batch-norm running statistics are
/// buffers, not parameters, and are excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub total: u64,
    pub trainable: u64,
    pub per_layer: BTreeMap<String, u64>,
}

/// Result of a lenient pretrained load.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub matched: Vec<String>,
    pub shape_mismatched: Vec<String>,
    pub missing: Vec<String>,
}

/// A backbone plus global-average-pool → dense → softmax head.
pub struct Model<F: Scalar = f32> {
    pub kind: BackboneKind,
    pub config: ModelConfig,
    features: Sequential<F>,
    head: Dense<F>,
    feat_dim: usize,
    gap_cache: Option<(usize, usize, usize, usize)>,
}

impl<F: Scalar> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("kind", &self.kind)
            .field("config", &self.config)
            .field("feature_dim", &self.feat_dim)
            .finish_non_exhaustive()
    }
}

/// Build a freshly initialized model of the given kind. Random init is
/// fan-in-scaled normal, seeded; `WeightInit::Pretrained` additionally loads
/// backbone weights from the archive (head untouched).
pub fn build_model<F: Scalar>(
    kind: BackboneKind,
    config: ModelConfig,
) -> Result<Model<F>, ModelError> {
    config.validate()?;
    let seed = match &config.weight_init {
        WeightInit::Random { seed } => *seed,
        WeightInit::Pretrained { .. } => 0,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (features, feat_dim) = match kind {
        BackboneKind::Resnet50 => resnet::build(&mut rng),
        BackboneKind::Inceptionv3 => inception::build(&mut rng),
        BackboneKind::Efficientnetb0 => efficientnet::build(&mut rng),
        BackboneKind::DeskResnet => desk::build_resnet(&mut rng),
        BackboneKind::DeskInception => desk::build_inception(&mut rng),
        BackboneKind::DeskEfficientnet => desk::build_efficientnet(&mut rng),
    };
    let head = Dense::with_std(feat_dim, config.num_classes, HEAD_INIT_STD, &mut rng);
    let mut model = Model {
        kind,
        config: config.clone(),
        features,
        head,
        feat_dim,
        gap_cache: None,
    };
    if let WeightInit::Pretrained { path } = &config.weight_init {
        load_pretrained(&mut model, path)?;
    }
    Ok(model)
}

impl<F: Scalar> Model<F> {
    pub fn feature_dim(&self) -> usize {
        self.feat_dim
    }

    /// Convert an NHWC f32 batch into the NCHW activation layout.
    pub fn batch_to_input(&self, batch: &TensorBatch) -> Result<Array4<F>, ModelError> {
        let (h, w, c) = (
            self.config.input_height,
            self.config.input_width,
            self.config.input_channels,
        );
        if batch.height != h || batch.width != w || batch.channels != c {
            return Err(ModelError::Shape {
                expected: format!("n×{h}×{w}×{c}"),
                got: format!(
                    "{}×{}×{}×{}",
                    batch.n, batch.height, batch.width, batch.channels
                ),
            });
        }
        let mut x = Array4::<F>::zeros((batch.n, c, h, w));
        for i in 0..batch.n {
            for y in 0..h {
                for xx in 0..w {
                    for ch in 0..c {
                        x[[i, ch, y, xx]] = F::from_f64(f64::from(batch.get(i, y, xx, ch)));
                    }
                }
            }
        }
        Ok(x)
    }

    /// Raw class scores. Training mode caches activations for
    /// `backward_from_logits`.
    pub fn forward_logits(&mut self, x: &Array4<F>, train: bool) -> Array2<F> {
        let feat = self.features.forward(x, train);
        let (n, c, h, w) = feat.dim();
        self.gap_cache = Some((n, c, h, w));
        let inv = F::from_f64(1.0 / (h * w) as f64);
        let mut pooled = Array2::<F>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let mut sum = F::zero();
                for y in 0..h {
                    for xx in 0..w {
                        sum = sum + feat[[i, ch, y, xx]];
                    }
                }
                pooled[[i, ch]] = sum * inv;
            }
        }
        self.head.forward2(&pooled, train)
    }

    /// Backpropagate from logit gradients through head, pooling and backbone.
    pub fn backward_from_logits(&mut self, dlogits: &Array2<F>) {
        let dpool = self.head.backward2(dlogits);
        let (n, c, h, w) = self.gap_cache.expect("backward without training forward");
        let inv = F::from_f64(1.0 / (h * w) as f64);
        let mut dfeat = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let g = dpool[[i, ch]] * inv;
                for y in 0..h {
                    for xx in 0..w {
                        dfeat[[i, ch, y, xx]] = g;
                    }
                }
            }
        }
        self.features.backward(&dfeat);
    }

    /// Probability rows for a preprocessed batch, in inference mode (batch
    /// norm reads running statistics; output is deterministic).
    pub fn forward_batch(&mut self, batch: &TensorBatch) -> Result<Array2<F>, ModelError> {
        let x = self.batch_to_input(batch)?;
        Ok(self.forward_probs(&x))
    }

    /// Probability rows for an NCHW input, inference mode.
    pub fn forward_probs(&mut self, x: &Array4<F>) -> Array2<F> {
        let logits = self.forward_logits(x, false);
        softmax_rows(&logits)
    }

    /// Visit every named tensor: backbone first, then `head.weight`/`head.bias`.
    pub fn visit_tensors(&mut self, f: &mut dyn FnMut(&str, TensorRole, &mut Param<F>)) {
        self.features.visit("", f);
        self.head.visit_dense("head.", f);
    }

    pub fn zero_grads(&mut self) {
        self.visit_tensors(&mut |_, role, p| {
            if role == TensorRole::Trainable {
                p.zero_grad();
            }
        });
    }

    /// Exact parameter counts by traversal.
    pub fn parameter_count(&mut self) -> ParameterSummary {
        let mut per_layer = BTreeMap::new();
        self.visit_tensors(&mut |name, role, p| {
            if role == TensorRole::Trainable {
                per_layer.insert(name.to_string(), p.len() as u64);
            }
        });
        let total: u64 = per_layer.values().sum();
        ParameterSummary {
            total,
            trainable: total, // nothing is frozen in this artifact
            per_layer,
        }
    }

    fn snapshot(&mut self) -> BTreeMap<String, TensorEntry> {
        let mut entries = BTreeMap::new();
        self.visit_tensors(&mut |name, _, p| {
            entries.insert(
                name.to_string(),
                TensorEntry {
                    shape: p.shape.clone(),
                    values: p.data.iter().map(|&v| v.to_f64_() as f32).collect(),
                },
            );
        });
        entries
    }

    /// Write all tensors (parameters and running statistics) plus metadata.
    pub fn save_checkpoint(&mut self, path: &Path) -> Result<(), ModelError> {
        let entries = self.snapshot();
        let metadata = serde_json::json!({
            "kind": self.kind,
            "config": self.config,
            "format_version": FORMAT_VERSION,
        });
        write_archive(path, &entries, &metadata)
    }
}

/// Restore a checkpointed model; the archive metadata must name the same
/// kind and supplies the config (so input/head shapes are restored).
pub fn load_checkpoint<F: Scalar>(kind: BackboneKind, path: &Path) -> Result<Model<F>, ModelError> {
    let (entries, metadata) = read_archive(path)?;
    let metadata = metadata.ok_or_else(|| ModelError::IncompatibleArchive {
        path: path.to_path_buf(),
        reason: "missing metadata side-record".into(),
    })?;
    let meta_kind: BackboneKind =
        serde_json::from_value(metadata["kind"].clone()).map_err(|_| {
            ModelError::IncompatibleArchive {
                path: path.to_path_buf(),
                reason: "metadata has no model kind".into(),
            }
        })?;
    if meta_kind != kind {
        return Err(ModelError::IncompatibleArchive {
            path: path.to_path_buf(),
            reason: format!("archive holds {meta_kind}, requested {kind}"),
        });
    }
    let config: ModelConfig =
        serde_json::from_value(metadata["config"].clone()).map_err(|e| {
            ModelError::IncompatibleArchive {
                path: path.to_path_buf(),
                reason: format!("malformed config metadata: {e}"),
            }
        })?;
    // Rebuild with random init, then overwrite every tensor strictly.
    let rebuild_config = ModelConfig {
        weight_init: WeightInit::default(),
        ..config.clone()
    };
    let mut model = build_model::<F>(kind, rebuild_config)?;
    model.config = config;
    let mut error: Option<ModelError> = None;
    model.visit_tensors(&mut |name, _, p| {
        if error.is_some() {
            return;
        }
        match entries.get(name) {
            Some(entry) if entry.shape == p.shape => {
                for (dst, &src) in p.data.iter_mut().zip(&entry.values) {
                    *dst = F::from_f64(f64::from(src));
                }
            }
            Some(entry) => {
                error = Some(ModelError::IncompatibleArchive {
                    path: path.to_path_buf(),
                    reason: format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        entry.shape, p.shape
                    ),
                });
            }
            None => {
                error = Some(ModelError::IncompatibleArchive {
                    path: path.to_path_buf(),
                    reason: format!("tensor {name} missing from archive"),
                });
            }
        }
    });
    match error {
        Some(e) => Err(e),
        None => Ok(model),
    }
}

/// Replace every backbone tensor whose name and shape match the archive;
/// head parameters are never touched. Errors only when nothing matches.
pub fn load_pretrained<F: Scalar>(
    model: &mut Model<F>,
    archive_path: &Path,
) -> Result<LoadReport, ModelError> {
    let (entries, _) = read_archive(archive_path)?;
    let mut report = LoadReport::default();
    model.visit_tensors(&mut |name, _, p| {
        if name.starts_with("head.") {
            return;
        }
        match entries.get(name) {
            Some(entry) if entry.shape == p.shape => {
                for (dst, &src) in p.data.iter_mut().zip(&entry.values) {
                    *dst = F::from_f64(f64::from(src));
                }
                report.matched.push(name.to_string());
            }
            Some(_) => report.shape_mismatched.push(name.to_string()),
            None => report.missing.push(name.to_string()),
        }
    });
    if report.matched.is_empty() {
        return Err(ModelError::IncompatibleArchive {
            path: archive_path.to_path_buf(),
            reason: "no backbone tensor matched the archive".into(),
        });
    }
    Ok(report)
}
