//! Benchmark harness for Bangla handwritten digit recognition.
//!
//! The crate covers the full workflow: discovering and cleaning a multi-source
//! digit dataset, deterministic stratified splitting, image preprocessing in the
//! three common normalization conventions (`caffe`, `tf`, `torch`), building and
//! fine-tuning adapted CNN backbones (ResNet-50, Inception-v3, EfficientNet-B0,
//! plus reduced "desk" variants for fast tests), multiclass evaluation metrics
//! with classification reports, and run orchestration with plots and
//! machine-readable artifacts.
//!
//! The `numtabench` binary drives the same pipeline from the command line via
//! the `ingest`, `split`, `train`, `evaluate` and `compare` subcommands.

pub mod dataset;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod training;

pub use dataset::{CleanLog, DatasetManifest, SampleRecord, SourceTag, SplitResult, SplitSpec};
pub use metrics::{ClassMetrics, ClassificationReport, ConfusionMatrix};
pub use models::{BackboneKind, Model, ModelConfig, ParameterSummary};
pub use preprocess::{AugmentSpec, ImageBuffer, PreprocessMode, TensorBatch};
pub use report::{ComparisonTable, EpochDelta, RunConfig};
pub use training::{EpochHistory, TrainConfig, TrainedModel};
