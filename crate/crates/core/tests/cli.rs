//! End-to-end tests of the `numtabench` binary: ingest → split → train →
//! evaluate → compare, artifact round-trips, determinism, and exit codes.

mod common;

use numtabench::dataset::DatasetManifest;
use numtabench::metrics::ClassificationReport;
use numtabench::report::ComparisonTable;
use numtabench::training::EpochHistory;
use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_numtabench")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(bin());
    cmd.args(args);
    cmd.env_remove("NUMTA_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(path: &Path, root: &Path, out_dir: &Path, name: &str, seed: u64) {
    let config = serde_json::json!({
        "run_name": name,
        "dataset_root": root,
        "source_tags": ["a"],
        "split": {"seed": seed, "train_fraction": 0.8, "newdata_fraction": 0.5, "stratified": true},
        "model": "desk_efficientnet",
        "mode": {"mode": "tf", "channel_means": [0.0, 0.0, 0.0], "channel_stds": [1.0, 1.0, 1.0]},
        "epochs": 2,
        "learning_rate": 0.001,
        "batch_size": 16,
        "seed": seed,
        "output_dir": out_dir,
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    out: PathBuf,
    config: PathBuf,
}

fn workspace(name: &str, seed: u64) -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    common::write_dataset_root(&root, 10, 72, seed);
    let out = tmp.path().join("runs");
    let config = tmp.path().join("config.json");
    write_config(&config, &root, &out, name, seed);
    Workspace {
        _tmp: tmp,
        root,
        out,
        config,
    }
}

#[test]
fn full_workflow_produces_all_artifacts() {
    let ws = workspace("runA", 1);
    let cfg = ws.config.to_str().unwrap();
    let run_dir = ws.out.join("runA");

    let out = run(&["ingest", "--config", cfg], &[]);
    assert!(out.status.success(), "ingest failed: {}", stderr(&out));
    assert!(run_dir.join("manifest.json").exists());
    assert!(run_dir.join("clean_log.json").exists());
    let manifest = DatasetManifest::load_json(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.len(), 100);

    let out = run(&["split", "--config", cfg], &[]);
    assert!(out.status.success(), "split failed: {}", stderr(&out));
    let train = DatasetManifest::load_json(&run_dir.join("split/train.json")).unwrap();
    let test = DatasetManifest::load_json(&run_dir.join("split/test.json")).unwrap();
    let new_data = DatasetManifest::load_json(&run_dir.join("split/new_data.json")).unwrap();
    assert_eq!(train.len() + test.len() + new_data.len(), 100);
    assert_eq!(train.len(), 80);
    assert!(train.ids().is_disjoint(&test.ids()));
    assert!(train.ids().is_disjoint(&new_data.ids()));

    let out = run(&["train", "--config", cfg], &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    for artifact in [
        "history.csv",
        "checkpoint.ntar",
        "checkpoint.ntar.json",
        "config.json",
        "loss.png",
        "accuracy.png",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let history =
        EpochHistory::from_csv(&std::fs::read_to_string(run_dir.join("history.csv")).unwrap())
            .unwrap();
    assert_eq!(history.len(), 2);
    assert!(!run_dir.join(".lock").exists(), "lock not released");

    let out = run(&["evaluate", "--config", cfg], &[]);
    assert!(out.status.success(), "evaluate failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("macro avg"));
    assert!(text.contains("[test]"));
    assert!(text.contains("[new_data]"));
    for artifact in [
        "report_test.json",
        "report_test.csv",
        "report_new_data.json",
        "report_new_data.csv",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let report: ClassificationReport = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("report_test.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report.total_support, 10);

    let cmp_dir = ws.out.join("cmp");
    let out = run(
        &[
            "compare",
            run_dir.to_str().unwrap(),
            "--out",
            cmp_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "compare failed: {}", stderr(&out));
    let table: ComparisonTable = serde_json::from_str(
        &std::fs::read_to_string(cmp_dir.join("comparison.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.rows[0].best);
    assert!(cmp_dir.join("comparison.png").exists());
    assert!(image::open(cmp_dir.join("comparison.png")).is_ok());
}

#[test]
fn end_to_end_runs_are_deterministic() {
    let ws_a = workspace("det", 7);
    let ws_b = workspace("det", 7);
    for ws in [&ws_a, &ws_b] {
        let cfg = ws.config.to_str().unwrap();
        assert!(run(&["ingest", "--config", cfg], &[]).status.success());
        assert!(run(&["split", "--config", cfg], &[]).status.success());
        assert!(run(&["train", "--config", cfg], &[]).status.success());
    }
    let history_a = std::fs::read(ws_a.out.join("det/history.csv")).unwrap();
    let history_b = std::fs::read(ws_b.out.join("det/history.csv")).unwrap();
    assert_eq!(history_a, history_b, "histories differ between identical runs");

    // Split id sets are identical too.
    for part in ["train", "test", "new_data"] {
        let a = DatasetManifest::load_json(&ws_a.out.join(format!("det/split/{part}.json"))).unwrap();
        let b = DatasetManifest::load_json(&ws_b.out.join(format!("det/split/{part}.json"))).unwrap();
        assert_eq!(a.ids(), b.ids(), "{part} ids differ");
    }
}

#[test]
fn flags_override_config_and_env_supplies_root() {
    let ws = workspace("flagrun", 3);
    // Config without dataset_root: the NUMTA_ROOT env var must fill it.
    let config = serde_json::json!({
        "run_name": "flagrun",
        "source_tags": ["a"],
        "split": {"seed": 3, "train_fraction": 0.8, "newdata_fraction": 0.0, "stratified": true},
        "model": "desk_efficientnet",
        "epochs": 1,
        "output_dir": ws.out,
    });
    std::fs::write(&ws.config, serde_json::to_string(&config).unwrap()).unwrap();
    let cfg = ws.config.to_str().unwrap();
    let root = ws.root.to_str().unwrap().to_string();
    let envs = [("NUMTA_ROOT", root.as_str())];

    assert!(run(&["ingest", "--config", cfg], &envs).status.success());
    assert!(run(&["split", "--config", cfg], &envs).status.success());
    // Override epochs and batch from flags.
    let out = run(
        &[
            "train", "--config", cfg, "--epochs", "1", "--batch", "8", "--lr", "0.0005",
        ],
        &envs,
    );
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let run_dir = ws.out.join("flagrun");
    let history =
        EpochHistory::from_csv(&std::fs::read_to_string(run_dir.join("history.csv")).unwrap())
            .unwrap();
    assert_eq!(history.len(), 1);
    // The config snapshot reflects the effective settings.
    let snapshot: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(snapshot["epochs"], 1);
    assert_eq!(snapshot["batch_size"], 8);

    // A checkpoint doubles as a pretrained backbone archive for a new run.
    let checkpoint = run_dir.join("checkpoint.ntar");
    let out = run(
        &[
            "train",
            "--config",
            cfg,
            "--name",
            "warmstart",
            "--epochs",
            "1",
            "--pretrained",
            checkpoint.to_str().unwrap(),
        ],
        &envs,
    );
    // The warm-started run needs its own split first.
    assert_eq!(out.status.code(), Some(2));
    assert!(run(&["ingest", "--config", cfg, "--name", "warmstart"], &envs)
        .status
        .success());
    assert!(run(&["split", "--config", cfg, "--name", "warmstart"], &envs)
        .status
        .success());
    let out = run(
        &[
            "train",
            "--config",
            cfg,
            "--name",
            "warmstart",
            "--epochs",
            "1",
            "--pretrained",
            checkpoint.to_str().unwrap(),
        ],
        &envs,
    );
    assert!(out.status.success(), "warm start failed: {}", stderr(&out));
    assert!(ws.out.join("warmstart/checkpoint.ntar").exists());
}

#[test]
fn exit_codes_distinguish_config_data_and_training_failures() {
    let ws = workspace("codes", 9);
    let cfg = ws.config.to_str().unwrap();

    // Malformed config file → 1.
    let bad_cfg = ws.root.join("bad.json");
    std::fs::write(&bad_cfg, "{not json").unwrap();
    let out = run(&["ingest", "--config", bad_cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));

    // Unknown model kind → 1.
    let out = run(&["train", "--config", cfg, "--model", "vgg19"], &[]);
    assert_eq!(out.status.code(), Some(1));

    // Unknown preprocess mode → 1.
    let out = run(&["train", "--config", cfg, "--mode", "mxnet"], &[]);
    assert_eq!(out.status.code(), Some(1));

    // Split before ingest → 2 (missing manifest).
    let out = run(&["split", "--config", cfg], &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));

    // Train before split → 2.
    let out = run(&["train", "--config", cfg], &[]);
    assert_eq!(out.status.code(), Some(2));

    // Evaluate without a checkpoint → 2.
    let out = run(&["evaluate", "--config", cfg], &[]);
    assert_eq!(out.status.code(), Some(2));

    // Ingest over a root missing the requested source → 2.
    let empty = ws.root.join("empty_root");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(
        &["ingest", "--config", cfg, "--root", empty.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));

    // Non-finite loss → 3, with a partial history left on disk.
    assert!(run(&["ingest", "--config", cfg], &[]).status.success());
    assert!(run(&["split", "--config", cfg], &[]).status.success());
    let out = run(&["train", "--config", cfg, "--lr", "1e30"], &[]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
    assert!(ws.out.join("codes/history.csv").exists());
}

#[test]
fn train_refuses_to_overwrite_a_completed_run() {
    let ws = workspace("repeat", 11);
    let cfg = ws.config.to_str().unwrap();
    assert!(run(&["ingest", "--config", cfg], &[]).status.success());
    assert!(run(&["split", "--config", cfg], &[]).status.success());
    assert!(run(&["train", "--config", cfg], &[]).status.success());
    let out = run(&["train", "--config", cfg], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("already contains"));
}

#[test]
fn compare_ranks_two_runs() {
    let ws = workspace("cmpA", 21);
    let cfg = ws.config.to_str().unwrap();
    assert!(run(&["ingest", "--config", cfg], &[]).status.success());
    assert!(run(&["split", "--config", cfg], &[]).status.success());
    assert!(run(&["train", "--config", cfg], &[]).status.success());
    assert!(run(&["evaluate", "--config", cfg], &[]).status.success());

    // Second run in the same output dir under a different name and seed.
    let out = run(&["ingest", "--config", cfg, "--name", "cmpB", "--seed", "22"], &[]);
    assert!(out.status.success());
    assert!(run(&["split", "--config", cfg, "--name", "cmpB", "--seed", "22"], &[])
        .status
        .success());
    assert!(run(&["train", "--config", cfg, "--name", "cmpB", "--seed", "22"], &[])
        .status
        .success());
    assert!(run(&["evaluate", "--config", cfg, "--name", "cmpB", "--seed", "22"], &[])
        .status
        .success());

    let dir_a = ws.out.join("cmpA");
    let dir_b = ws.out.join("cmpB");
    let cmp_out = ws.out.join("comparison");
    let out = run(
        &[
            "compare",
            dir_a.to_str().unwrap(),
            dir_b.to_str().unwrap(),
            "--out",
            cmp_out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "compare failed: {}", stderr(&out));
    let table: ComparisonTable = serde_json::from_str(
        &std::fs::read_to_string(cmp_out.join("comparison.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows[0].best);
    assert!(table.rows[0].accuracy >= table.rows[1].accuracy);
    let text = stdout(&out);
    assert!(text.contains("epoch delta"));
}
