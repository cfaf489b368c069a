//! Command-line driver for the digit-recognition benchmark workflow:
//! `ingest` → `split` → `train` → `evaluate`, plus `compare` across runs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
//! failure (non-finite loss).

use clap::{Args, Parser, Subcommand};
use numtabench::dataset::{
    scan_sources_with, stratified_split, subsample, validate_and_clean, DatasetError,
    DatasetManifest,
};
use numtabench::metrics::{build_report, render_report_text, report_to_csv};
use numtabench::models::{build_model, load_checkpoint, ModelConfig, ModelError, WeightInit};
use numtabench::preprocess::{ModeKind, PreprocessMode};
use numtabench::report::{
    compare, epoch_delta, render_comparison_chart, render_plots, ReportError, RunConfig, RunLock,
    RunPaths,
};
use numtabench::training::{predict_labels, train_augmented, EpochHistory, TrainError};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "numtabench",
    about = "Benchmark harness for Bangla handwritten digit recognition",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root; overrides the config and the NUMTA_ROOT default.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Model kind: resnet50 | inceptionv3 | efficientnetb0 | desk_*.
    #[arg(long)]
    model: Option<String>,
    /// Output directory holding run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run name (directory under --out).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size; defaults per model kind (64 for efficientnetb0, else 32).
    #[arg(long)]
    batch: Option<usize>,
    /// Preprocess mode: caffe | tf | torch.
    #[arg(long)]
    mode: Option<String>,
    /// Pretrained backbone archive.
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the dataset sources, clean them, and write the manifest.
    Ingest(ConfigArgs),
    /// Split the ingested manifest into train / test / new-data.
    Split(ConfigArgs),
    /// Fine-tune the configured model on the split.
    Train(ConfigArgs),
    /// Evaluate a trained checkpoint and emit classification reports.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Which partition(s) to evaluate: test | new_data | train | all.
        #[arg(long, default_value = "all")]
        split: String,
        /// Checkpoint path; defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare completed runs and emit a comparison table and chart.
    Compare {
        /// Run directories to compare.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for comparison.json / comparison.png.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Data(String),
    Training(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Training(m) => m,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidSplitSpec(_) | DatasetError::InvalidTag(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnsupportedKind(_) | ModelError::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Training(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Malformed { .. } | ReportError::Locked(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Split(args) => cmd_split(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate {
            config,
            split,
            checkpoint,
        } => cmd_evaluate(&config, &split, checkpoint.as_deref()),
        Command::Compare { runs, out } => cmd_compare(&runs, &out),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

/// Merge the config file (or defaults) with command-line overrides.
fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(root) = &args.root {
        config.dataset_root = root.clone();
    }
    if let Some(model) = &args.model {
        config.model = model.parse()?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(name) = &args.name {
        config.run_name = name.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.split.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(batch) = args.batch {
        config.batch_size = Some(batch);
    }
    if let Some(mode) = &args.mode {
        let kind: ModeKind = mode
            .parse()
            .map_err(|e: String| CliError::Config(e))?;
        config.mode = PreprocessMode::from_kind(kind);
    }
    if let Some(pretrained) = &args.pretrained {
        config.pretrained = Some(pretrained.clone());
    }
    if config.run_name.is_empty() {
        return Err(CliError::Config("run name must not be empty".into()));
    }
    Ok(config)
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "{} not found; run the previous stage first",
            path.display()
        )));
    }
    Ok(DatasetManifest::load_json(path)?)
}

fn cmd_ingest(args: &ConfigArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let paths = RunPaths::new(config.run_dir());
    std::fs::create_dir_all(&paths.root)
        .map_err(|e| CliError::Data(format!("cannot create run dir: {e}")))?;
    let raw = scan_sources_with(&config.dataset_root, &config.source_tags, &config.csv_columns)?;
    println!(
        "scanned {} records from {} ({} row errors)",
        raw.len(),
        config.dataset_root.display(),
        raw.row_errors.len()
    );
    let (clean, log) = validate_and_clean(&raw);
    println!(
        "clean: kept {} dropped {} missing-label {} missing-file {} unreadable",
        log.kept, log.dropped_missing_label, log.dropped_missing_file, log.dropped_unreadable
    );
    clean.save_json(&paths.manifest())?;
    std::fs::write(
        paths.clean_log(),
        serde_json::to_string_pretty(&log).expect("log serializes"),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    config.save(&paths.config())?;
    println!("manifest: {}", paths.manifest().display());
    Ok(())
}

fn cmd_split(args: &ConfigArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let paths = RunPaths::new(config.run_dir());
    let mut manifest = read_manifest(&paths.manifest())?;
    if let Some(n) = config.subsample {
        manifest = subsample(&manifest, n, config.split.seed)?;
        println!("subsampled to {} records", manifest.len());
    }
    let result = stratified_split(&manifest, &config.split)?;
    std::fs::create_dir_all(paths.split_dir()).map_err(|e| CliError::Data(e.to_string()))?;
    result.train.save_json(&paths.split_manifest("train"))?;
    result.test.save_json(&paths.split_manifest("test"))?;
    result.new_data.save_json(&paths.split_manifest("new_data"))?;
    println!(
        "split: train {} / test {} / new_data {}",
        result.train.len(),
        result.test.len(),
        result.new_data.len()
    );
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let paths = RunPaths::new(config.run_dir());
    let train_manifest = read_manifest(&paths.split_manifest("train"))?;
    let test_manifest = read_manifest(&paths.split_manifest("test"))?;
    if paths.history().exists() {
        return Err(CliError::Config(format!(
            "run {} already contains training artifacts; use a fresh run name",
            paths.root.display()
        )));
    }
    let _lock = RunLock::acquire(&paths)?;

    let model_config = ModelConfig {
        weight_init: match &config.pretrained {
            Some(path) => WeightInit::Pretrained { path: path.clone() },
            None => WeightInit::Random { seed: config.seed },
        },
        ..ModelConfig::default()
    };
    let model = build_model::<f32>(config.model, model_config)?;
    let augment_spec = config
        .augment
        .as_ref()
        .map(|settings| settings.to_spec(96, 96))
        .transpose()?;
    let train_config = config.train_config();
    println!(
        "training {} for {} epochs (batch {}, lr {}, mode {})",
        config.model, train_config.epochs, train_config.batch_size, train_config.learning_rate,
        config.mode.mode
    );
    config.save(&paths.config())?;

    match train_augmented(
        model,
        &train_manifest,
        &test_manifest,
        &train_config,
        &config.mode,
        augment_spec.as_ref(),
    ) {
        Ok(mut outcome) => {
            for e in 0..outcome.history.len() {
                println!(
                    "epoch {:>3}: train_loss {:.4} train_acc {:.4} test_loss {:.4} test_acc {:.4}",
                    e + 1,
                    outcome.history.train_loss[e],
                    outcome.history.train_accuracy[e],
                    outcome.history.test_loss[e],
                    outcome.history.test_accuracy[e]
                );
            }
            std::fs::write(paths.history(), outcome.history.to_csv())
                .map_err(|e| CliError::Data(e.to_string()))?;
            outcome.model.save_checkpoint(&paths.checkpoint())?;
            render_plots(&outcome.history, &paths.root)?;
            let delta = epoch_delta(&outcome.history, config.model.name())?;
            println!(
                "test accuracy: epoch 1 {:.4} → final {:.4} (difference {:.4}); wall time {:.1}s",
                delta.accuracy_at_1, delta.accuracy_at_20, delta.difference, outcome.wall_time
            );
            println!("checkpoint: {}", paths.checkpoint().display());
            Ok(())
        }
        Err(TrainError::NonFiniteLoss { epoch, history }) => {
            // Keep the partial history on disk for post-mortems.
            let _ = std::fs::write(paths.history(), history.to_csv());
            Err(CliError::Training(format!(
                "non-finite loss at epoch {epoch}; partial history written to {}",
                paths.history().display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_evaluate(
    args: &ConfigArgs,
    which: &str,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(args)?;
    let paths = RunPaths::new(config.run_dir());
    let checkpoint_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| paths.checkpoint());
    if !checkpoint_path.exists() {
        return Err(CliError::Data(format!(
            "checkpoint {} not found; train first",
            checkpoint_path.display()
        )));
    }
    let mut model = load_checkpoint::<f32>(config.model, &checkpoint_path)?;
    let parts: Vec<&str> = match which {
        "all" => vec!["test", "new_data"],
        other => vec![other],
    };
    for part in parts {
        let manifest_path = paths.split_manifest(part);
        if !manifest_path.exists() {
            return Err(CliError::Data(format!(
                "split manifest {} not found",
                manifest_path.display()
            )));
        }
        let manifest = read_manifest(&manifest_path)?;
        if manifest.is_empty() {
            println!("[{part}] empty partition, skipped");
            continue;
        }
        let (y_true, y_pred) = predict_labels(&mut model, &manifest, &config.mode)?;
        let report = build_report(&y_true, &y_pred)
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!("[{part}] classification report");
        print!("{}", render_report_text(&report, 2));
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(paths.report_json(part), json)
            .map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(paths.report_csv(part), report_to_csv(&report))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

fn cmd_compare(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    for run in runs {
        let paths = RunPaths::new(run.clone());
        let report_path = paths.report_json("test");
        let text = std::fs::read_to_string(&report_path).map_err(|e| {
            CliError::Data(format!("cannot read {}: {e}", report_path.display()))
        })?;
        let report = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("malformed report in {}: {e}", run.display())))?;
        let history_text = std::fs::read_to_string(paths.history()).map_err(|e| {
            CliError::Data(format!("cannot read {}: {e}", paths.history().display()))
        })?;
        let history = EpochHistory::from_csv(&history_text).map_err(CliError::Data)?;
        let name = run
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        inputs.push((report, history, name));
    }
    let table = compare(&inputs)?;
    println!(
        "{:<20} {:>9} {:>9} {:>12} {:>10} {:>9} {:>6}",
        "model", "accuracy", "macro_f1", "weighted_f1", "test_loss", "test_acc", "best"
    );
    for row in &table.rows {
        println!(
            "{:<20} {:>9.4} {:>9.4} {:>12.4} {:>10.4} {:>9.4} {:>6}",
            row.name,
            row.accuracy,
            row.macro_f1,
            row.weighted_f1,
            row.final_test_loss,
            row.final_test_accuracy,
            if row.best { "*" } else { "" }
        );
    }
    for (_, history, name) in &inputs {
        let d = epoch_delta(history, name)?;
        println!(
            "epoch delta {:<20} {:.4} → {:.4} (difference {:.4})",
            d.model, d.accuracy_at_1, d.accuracy_at_20, d.difference
        );
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(e.to_string()))?;
    let json_path = out.join("comparison.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&table).expect("table serializes"),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    render_comparison_chart(&table, &out.join("comparison.png"))?;
    println!("comparison: {}", json_path.display());
    Ok(())
}
