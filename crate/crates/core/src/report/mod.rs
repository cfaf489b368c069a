//! Run orchestration: run configs, epoch-delta and cross-model comparison
//! tables, curve/comparison plots, and the on-disk run directory layout
//! (`config.json`, `history.csv`, `checkpoint.ntar`, report files, plots).

pub mod plot;

use crate::dataset::{CsvColumns, SourceTag, SplitSpec};
use crate::metrics::ClassificationReport;
use crate::models::BackboneKind;
use crate::preprocess::PreprocessMode;
use crate::training::{EpochHistory, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("no runs to compare")]
    EmptyRuns,
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} at {path}: {message}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("run directory {0} is locked by another invocation")]
    Locked(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Test-accuracy movement between the first and last epoch of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDelta {
    pub model: String,
    pub accuracy_at_1: f64,
    pub accuracy_at_20: f64,
    pub difference: f64,
}

/// Read test accuracy at epoch 1 and the final epoch; the difference is the
/// exact floating-point subtraction of the two.
pub fn epoch_delta(history: &EpochHistory, model: &str) -> Result<EpochDelta, ReportError> {
    if history.is_empty() {
        return Err(ReportError::EmptyHistory);
    }
    let first = history.test_accuracy[0];
    let last = *history.test_accuracy.last().unwrap();
    Ok(EpochDelta {
        model: model.to_string(),
        accuracy_at_1: first,
        accuracy_at_20: last,
        difference: last - first,
    })
}

/// One comparison row; every value is copied verbatim from the run's report
/// and history, nothing is recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Rank runs by descending report accuracy (ties alphabetically) and mark
/// the top row as best.
pub fn compare(
    runs: &[(ClassificationReport, EpochHistory, String)],
) -> Result<ComparisonTable, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::EmptyRuns);
    }
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(report, history, name)| {
            if history.is_empty() {
                return Err(ReportError::EmptyHistory);
            }
            Ok(ComparisonRow {
                name: name.clone(),
                accuracy: report.accuracy,
                macro_f1: report.macro_avg.f1,
                weighted_f1: report.weighted_avg.f1,
                final_test_loss: *history.test_loss.last().unwrap(),
                final_test_accuracy: *history.test_accuracy.last().unwrap(),
                best: false,
            })
        })
        .collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    rows[0].best = true;
    Ok(ComparisonTable { rows })
}

/// Emit `loss.png`, `accuracy.png` and the underlying `history.csv` into
/// `out_dir`; returns the two image paths.
pub fn render_plots(
    history: &EpochHistory,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf), ReportError> {
    if history.is_empty() {
        return Err(ReportError::EmptyHistory);
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let loss_path = out_dir.join("loss.png");
    let acc_path = out_dir.join("accuracy.png");
    plot::line_chart(
        &loss_path,
        "MODEL LOSS",
        "LOSS",
        &[
            plot::Series {
                label: "TRAIN",
                color: plot::TRAIN_COLOR,
                values: &history.train_loss,
            },
            plot::Series {
                label: "TEST",
                color: plot::TEST_COLOR,
                values: &history.test_loss,
            },
        ],
        1,
    )
    .map_err(io_err(&loss_path))?;
    plot::line_chart(
        &acc_path,
        "MODEL ACCURACY",
        "ACCURACY",
        &[
            plot::Series {
                label: "TRAIN",
                color: plot::TRAIN_COLOR,
                values: &history.train_accuracy,
            },
            plot::Series {
                label: "TEST",
                color: plot::TEST_COLOR,
                values: &history.test_accuracy,
            },
        ],
        1,
    )
    .map_err(io_err(&acc_path))?;
    let csv_path = out_dir.join("history.csv");
    std::fs::write(&csv_path, history.to_csv()).map_err(io_err(&csv_path))?;
    Ok((loss_path, acc_path))
}

/// Triple-bar comparison chart (accuracy / macro F1 / weighted F1 per model).
pub fn render_comparison_chart(table: &ComparisonTable, path: &Path) -> Result<(), ReportError> {
    let names: Vec<String> = table.rows.iter().map(|r| r.name.clone()).collect();
    let values: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| vec![r.accuracy, r.macro_f1, r.weighted_f1])
        .collect();
    plot::bar_chart(
        path,
        "MODEL COMPARISON",
        &names,
        &["ACCURACY", "MACRO F1", "WEIGHTED F1"],
        &values,
    )
    .map_err(io_err(path))
}

/// Serializable augmentation settings for a run; the superimposition donor
/// is referenced by path and loaded at train start. Absent block (the
/// default) means training sees clean images only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSettings {
    pub spatial: crate::preprocess::SpatialSpec,
    pub photometric: crate::preprocess::PhotometricSpec,
    pub occlusion: crate::preprocess::OcclusionSpec,
    pub superimpose: Option<SuperimposeSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperimposeSettings {
    pub alpha: f64,
    pub donor: PathBuf,
}

impl AugmentSettings {
    /// Materialize the runtime spec, loading and resizing the donor image.
    pub fn to_spec(&self, height: usize, width: usize) -> Result<crate::preprocess::AugmentSpec, ReportError> {
        let superimpose = match &self.superimpose {
            Some(s) => {
                let img = crate::dataset::load_image_path(&s.donor).map_err(|e| {
                    ReportError::Malformed {
                        what: "superimpose donor",
                        path: s.donor.clone(),
                        message: e.to_string(),
                    }
                })?;
                let img = crate::preprocess::resize_bilinear(&img, height, width)
                    .and_then(|img| crate::preprocess::ensure_three_channels(&img))
                    .map_err(|e| ReportError::Malformed {
                        what: "superimpose donor",
                        path: s.donor.clone(),
                        message: e.to_string(),
                    })?;
                Some(crate::preprocess::SuperimposeSpec {
                    alpha: s.alpha,
                    donor: img,
                })
            }
            None => None,
        };
        Ok(crate::preprocess::AugmentSpec {
            spatial: self.spatial,
            photometric: self.photometric,
            occlusion: self.occlusion,
            superimpose,
        })
    }
}

/// Everything one run needs, mirrored one-to-one into the run directory's
/// `config.json` snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_name: String,
    pub dataset_root: PathBuf,
    pub source_tags: Vec<SourceTag>,
    pub csv_columns: CsvColumns,
    /// Optional stratified subsample applied after cleaning.
    pub subsample: Option<usize>,
    pub split: SplitSpec,
    pub model: BackboneKind,
    pub mode: PreprocessMode,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Defaults per model kind when absent (64 for EfficientNet-B0, else 32).
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub shuffle: bool,
    pub pretrained: Option<PathBuf>,
    /// Optional training-time augmentation; evaluation always sees clean
    /// images.
    pub augment: Option<AugmentSettings>,
    pub output_dir: PathBuf,
}

/// Default dataset root: the `NUMTA_ROOT` environment variable when set,
/// otherwise the current directory.
pub fn default_dataset_root() -> PathBuf {
    std::env::var_os("NUMTA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_name: "run".into(),
            dataset_root: default_dataset_root(),
            source_tags: SourceTag::all(),
            csv_columns: CsvColumns::default(),
            subsample: None,
            split: SplitSpec::default(),
            model: BackboneKind::Efficientnetb0,
            mode: PreprocessMode::caffe(),
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: None,
            seed: 0,
            shuffle: true,
            pretrained: None,
            augment: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
            what: "run config",
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn effective_batch_size(&self) -> usize {
        self.batch_size.unwrap_or(self.model.default_batch_size())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.effective_batch_size(),
            epochs: self.epochs,
            seed: self.seed,
            shuffle: self.shuffle,
            ..TrainConfig::default()
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }
}

/// Well-known file names inside a run directory.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn clean_log(&self) -> PathBuf {
        self.root.join("clean_log.json")
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn split_manifest(&self, part: &str) -> PathBuf {
        self.split_dir().join(format!("{part}.json"))
    }

    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.ntar")
    }

    pub fn report_json(&self, dataset: &str) -> PathBuf {
        self.root.join(format!("report_{dataset}.json"))
    }

    pub fn report_csv(&self, dataset: &str) -> PathBuf {
        self.root.join(format!("report_{dataset}.csv"))
    }

    pub fn comparison_json(&self) -> PathBuf {
        self.root.join("comparison.json")
    }

    pub fn comparison_png(&self) -> PathBuf {
        self.root.join("comparison.png")
    }

    fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

/// Exclusive per-run-directory lock; the file disappears when the guard
/// drops. Concurrent invocations must target distinct run directories.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(paths: &RunPaths) -> Result<RunLock, ReportError> {
        std::fs::create_dir_all(&paths.root).map_err(io_err(&paths.root))?;
        let lock = paths.lock_path();
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(RunLock { path: lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ReportError::Locked(paths.root.clone()))
            }
            Err(e) => Err(ReportError::Io {
                path: lock,
                source: e,
            }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
