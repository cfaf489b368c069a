//! Dataset discovery, validation, subsampling and splitting.
//!
//! The on-disk layout follows the multi-source convention: one
//! `training-<t>.csv` label file plus one `training-<t>/` image directory per
//! source tag `t` in `a..f`. Cleaning never imputes: records with missing
//! labels or missing/undecodable image files are dropped and accounted for in
//! a [`CleanLog`]. Subsampling and splitting are stratified by class with
//! largest-remainder rounding and are pure functions of their inputs and seed.

use crate::preprocess::ImageBuffer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("source tag {tag} has no label file at {path}")]
    MissingSource { tag: char, path: PathBuf },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("subsample of {n} exceeds manifest size {size}")]
    SubsampleTooLarge { n: usize, size: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("invalid split spec: {0}")]
    InvalidSplitSpec(String),
    #[error("record {id} has no label; clean the manifest first")]
    Unlabeled { id: String },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("invalid source tag {0:?}; expected a..f")]
    InvalidTag(char),
    #[error("manifest is empty")]
    Empty,
    #[error("malformed manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One of the dataset's contributing sources, `a` through `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "char", into = "char")]
pub struct SourceTag(char);

impl SourceTag {
    pub fn new(c: char) -> Result<Self, DatasetError> {
        if ('a'..='f').contains(&c) {
            Ok(Self(c))
        } else {
            Err(DatasetError::InvalidTag(c))
        }
    }

    pub fn as_char(&self) -> char {
        self.0
    }

    /// All six tags in order.
    pub fn all() -> Vec<SourceTag> {
        ('a'..='f').map(SourceTag).collect()
    }
}

impl TryFrom<char> for SourceTag {
    type Error = String;

    fn try_from(c: char) -> Result<Self, Self::Error> {
        SourceTag::new(c).map_err(|e| e.to_string())
    }
}

impl From<SourceTag> for char {
    fn from(t: SourceTag) -> char {
        t.0
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One labeled image. `label` is `None` until cleaning proves it parseable;
/// cleaned manifests contain only labeled records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(rename = "path")]
    pub image_path: PathBuf,
    pub label: Option<u8>,
    pub source_tag: SourceTag,
}

/// A structurally unusable CSV row, collected rather than thrown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub source_tag: SourceTag,
    pub line: u64,
    pub message: String,
}

/// Ordered inventory of records with per-class and per-source counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_errors: Vec<RowError>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        Self {
            records,
            row_errors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of records per label; unlabeled records are not counted.
    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(label) = r.label {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Count of records per source tag.
    pub fn provenance(&self) -> BTreeMap<SourceTag, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.source_tag).or_insert(0) += 1;
        }
        counts
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    fn labels_or_err(&self) -> Result<Vec<u8>, DatasetError> {
        self.records
            .iter()
            .map(|r| {
                r.label.ok_or_else(|| DatasetError::Unlabeled {
                    id: r.id.clone(),
                })
            })
            .collect()
    }

    fn subset(&self, keep: &[bool]) -> DatasetManifest {
        DatasetManifest::new(
            self.records
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "records": self.records,
            "row_errors": self.row_errors,
            "class_counts": self.class_counts().into_iter()
                .map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
            "provenance": self.provenance().into_iter()
                .map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let records: Vec<SampleRecord> =
            serde_json::from_value(value.get("records").cloned().unwrap_or_default())?;
        let row_errors: Vec<RowError> = match value.get("row_errors") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Vec::new(),
        };
        Ok(Self {
            records,
            row_errors,
        })
    }
}

/// Accounting of a cleaning pass; `kept` plus the drop counts always equals
/// the input record count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanLog {
    pub dropped_missing_label: usize,
    pub dropped_missing_file: usize,
    pub dropped_unreadable: usize,
    pub kept: usize,
}

impl CleanLog {
    pub fn total(&self) -> usize {
        self.kept + self.dropped_missing_label + self.dropped_missing_file + self.dropped_unreadable
    }
}

/// Deterministic split parameters. `train_fraction` of the records go to
/// train; the remainder forms a test pool of which `newdata_fraction` is
/// carved into the new-data holdout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub newdata_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 0.8,
            newdata_fraction: 0.5,
            stratified: true,
        }
    }
}

/// Pairwise-disjoint train / test / new-data manifests covering the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub new_data: DatasetManifest,
}

/// CSV column names, overridable for datasets that deviate from the
/// `filename`/`digit` convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub filename: String,
    pub label: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            filename: "filename".into(),
            label: "digit".into(),
        }
    }
}

/// Scan `training-<t>.csv` + `training-<t>/` for each requested tag,
/// alphabetically, using the default column names.
pub fn scan_sources(root: &Path, tags: &[SourceTag]) -> Result<DatasetManifest, DatasetError> {
    scan_sources_with(root, tags, &CsvColumns::default())
}

/// [`scan_sources`] with explicit CSV column names.
pub fn scan_sources_with(
    root: &Path,
    tags: &[SourceTag],
    columns: &CsvColumns,
) -> Result<DatasetManifest, DatasetError> {
    let mut sorted: Vec<SourceTag> = tags.to_vec();
    sorted.sort();
    sorted.dedup();

    let mut records = Vec::new();
    let mut row_errors = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for tag in sorted {
        let csv_path = root.join(format!("training-{tag}.csv"));
        if !csv_path.exists() {
            return Err(DatasetError::MissingSource {
                tag: tag.as_char(),
                path: csv_path,
            });
        }
        let image_dir = root.join(format!("training-{tag}"));
        let mut reader =
            csv::Reader::from_path(&csv_path).map_err(|source| DatasetError::Csv {
                path: csv_path.clone(),
                source,
            })?;
        let headers = reader
            .headers()
            .map_err(|source| DatasetError::Csv {
                path: csv_path.clone(),
                source,
            })?
            .clone();
        let filename_idx = headers.iter().position(|h| h == columns.filename);
        let label_idx = headers.iter().position(|h| h == columns.label);
        let Some(filename_idx) = filename_idx else {
            row_errors.push(RowError {
                source_tag: tag,
                line: 1,
                message: format!("missing column {:?}", columns.filename),
            });
            continue;
        };

        for result in reader.records() {
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    row_errors.push(RowError {
                        source_tag: tag,
                        line: e
                            .position()
                            .map(|p| p.line())
                            .unwrap_or(0),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let filename = record.get(filename_idx).unwrap_or("").trim();
            if filename.is_empty() {
                row_errors.push(RowError {
                    source_tag: tag,
                    line,
                    message: "empty filename".into(),
                });
                continue;
            }
            let id = Path::new(filename)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| filename.to_string());
            if !seen_ids.insert(id.clone()) {
                row_errors.push(RowError {
                    source_tag: tag,
                    line,
                    message: format!("duplicate id {id:?}"),
                });
                continue;
            }
            // Label problems are not row errors: the record survives the scan
            // unlabeled and the cleaning pass drops and counts it.
            let label = label_idx
                .and_then(|i| record.get(i))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<u8>().ok())
                .filter(|&v| v <= 9);
            records.push(SampleRecord {
                id,
                image_path: image_dir.join(filename),
                label,
                source_tag: tag,
            });
        }
    }

    Ok(DatasetManifest {
        records,
        row_errors,
    })
}

/// Drop records whose label is missing/unparseable or whose image file is
/// absent or fails to decode. Never throws per-record; every input record is
/// accounted for in the returned [`CleanLog`].
pub fn validate_and_clean(manifest: &DatasetManifest) -> (DatasetManifest, CleanLog) {
    let mut log = CleanLog::default();
    let mut kept = Vec::new();
    for r in &manifest.records {
        if r.label.is_none() {
            log.dropped_missing_label += 1;
            continue;
        }
        if !r.image_path.exists() {
            log.dropped_missing_file += 1;
            continue;
        }
        if image::open(&r.image_path).is_err() {
            log.dropped_unreadable += 1;
            continue;
        }
        log.kept += 1;
        kept.push(r.clone());
    }
    (DatasetManifest::new(kept), log)
}

/// Largest-remainder allocation of `total` across classes proportional to
/// `sizes`. Ties broken by descending remainder then ascending class.
fn largest_remainder(sizes: &BTreeMap<u8, usize>, total: usize, pool: usize) -> BTreeMap<u8, usize> {
    let mut quotas: BTreeMap<u8, usize> = BTreeMap::new();
    let mut remainders: Vec<(u8, f64)> = Vec::new();
    let mut allocated = 0usize;
    for (&class, &size) in sizes {
        let exact = total as f64 * size as f64 / pool as f64;
        let base = exact.floor() as usize;
        quotas.insert(class, base);
        remainders.push((class, exact - base as f64));
        allocated += base;
    }
    let mut order: Vec<usize> = (0..remainders.len()).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .1
            .partial_cmp(&remainders[a].1)
            .unwrap()
            .then(remainders[a].0.cmp(&remainders[b].0))
    });
    let mut leftover = total.saturating_sub(allocated);
    for &i in order.iter().cycle().take(order.len() * 2) {
        if leftover == 0 {
            break;
        }
        let class = remainders[i].0;
        if quotas[&class] < sizes[&class] {
            *quotas.get_mut(&class).unwrap() += 1;
            leftover -= 1;
        }
    }
    quotas
}

/// Select exactly `n` records, stratified proportionally by class with
/// largest-remainder rounding, deterministic in `seed`. Output preserves the
/// manifest order of the surviving records.
pub fn subsample(
    manifest: &DatasetManifest,
    n: usize,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    if n > manifest.len() {
        return Err(DatasetError::SubsampleTooLarge {
            n,
            size: manifest.len(),
        });
    }
    let labels = manifest.labels_or_err()?;
    let sizes = manifest.class_counts();
    let quotas = largest_remainder(&sizes, n, manifest.len());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut keep = vec![false; manifest.len()];
    for (&class, &quota) in &quotas {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(quota) {
            keep[i] = true;
        }
    }
    Ok(manifest.subset(&keep))
}

/// Partition the manifest into train / test / new-data.
///
/// The test pool receives `ceil((1 − train_fraction) · N)` records overall
/// (matching the convention that rounds the held-out side up), allocated
/// per class by largest remainder, and `newdata_fraction` of the pool is
/// carved into the new-data holdout. Same manifest and spec always produce
/// the same id sets.
pub fn stratified_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<SplitResult, DatasetError> {
    if manifest.is_empty() {
        return Err(DatasetError::Empty);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::InvalidSplitSpec(format!(
            "train_fraction must lie in (0,1), got {}",
            spec.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.newdata_fraction) {
        return Err(DatasetError::InvalidSplitSpec(format!(
            "newdata_fraction must lie in [0,1), got {}",
            spec.newdata_fraction
        )));
    }
    let labels = manifest.labels_or_err()?;
    let n = manifest.len();
    let pool_total = ((1.0 - spec.train_fraction) * n as f64).ceil() as usize;

    let sizes: BTreeMap<u8, usize> = if spec.stratified {
        manifest.class_counts()
    } else {
        // Single pseudo-class: plain seeded shuffle and cut.
        let mut m = BTreeMap::new();
        m.insert(0u8, n);
        m
    };
    let pool_quotas = largest_remainder(&sizes, pool_total, n);
    let new_total = (spec.newdata_fraction * pool_total as f64 + 0.5).floor() as usize;
    let new_quotas = largest_remainder(&pool_quotas, new_total, pool_total.max(1));

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    const TRAIN: u8 = 0;
    const TEST: u8 = 1;
    const NEW: u8 = 2;
    let mut assign = vec![TRAIN; n];
    for (&class, &pool_c) in &pool_quotas {
        let mut indices: Vec<usize> = if spec.stratified {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .collect()
        } else {
            (0..n).collect()
        };
        let class_size = indices.len();
        let new_c = new_quotas.get(&class).copied().unwrap_or(0);
        let train_c = class_size - pool_c;
        let test_c = pool_c - new_c;
        if spec.stratified {
            if train_c == 0 {
                return Err(DatasetError::DegenerateSplit(format!(
                    "class {class} would have no training records"
                )));
            }
            if test_c == 0 {
                return Err(DatasetError::DegenerateSplit(format!(
                    "class {class} would have no test records"
                )));
            }
            if spec.newdata_fraction > 0.0 && new_c == 0 {
                return Err(DatasetError::DegenerateSplit(format!(
                    "class {class} would have no new-data records"
                )));
            }
        }
        indices.shuffle(&mut rng);
        for (k, &i) in indices.iter().enumerate().take(pool_c) {
            assign[i] = if k < new_c { NEW } else { TEST };
        }
    }

    let pick = |which: u8| {
        let keep: Vec<bool> = assign.iter().map(|&a| a == which).collect();
        manifest.subset(&keep)
    };
    Ok(SplitResult {
        train: pick(TRAIN),
        test: pick(TEST),
        new_data: pick(NEW),
    })
}

/// Decode a record's image file into an 8-bit buffer (1 or 3 channels; alpha
/// is dropped). Should be unreachable for cleaned records unless the
/// filesystem changed underneath.
pub fn load_image(record: &SampleRecord) -> Result<ImageBuffer, DatasetError> {
    load_image_path(&record.image_path)
}

/// [`load_image`] for a bare path (augmentation donors, ad-hoc tooling).
pub fn load_image_path(path: &Path) -> Result<ImageBuffer, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(dynamic_to_buffer(img))
}

pub(crate) fn dynamic_to_buffer(img: image::DynamicImage) -> ImageBuffer {
    use image::DynamicImage;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            ImageBuffer::new(h as usize, w as usize, 1, g.into_raw())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.into_luma8();
            let (w, h) = g.dimensions();
            ImageBuffer::new(h as usize, w as usize, 1, g.into_raw())
        }
        other => {
            let rgb = other.into_rgb8();
            let (w, h) = rgb.dimensions();
            ImageBuffer::new(h as usize, w as usize, 3, rgb.into_raw())
        }
    }
}
