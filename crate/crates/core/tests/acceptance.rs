//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p numtabench --test acceptance -- --nocapture`.

mod common;

use ndarray::Array4;
use numtabench::dataset::{stratified_split, subsample, DatasetManifest, SampleRecord, SourceTag, SplitSpec};
use numtabench::metrics::{
    build_report, format_half_up, macro_average, weighted_average, ClassMetrics,
};
use numtabench::models::{build_model, BackboneKind, Model, ModelConfig};
use numtabench::nn::{softmax_cross_entropy, TensorRole};
use numtabench::preprocess::{invert_caffe, preprocess_batch, ImageBuffer, PreprocessMode};
use numtabench::report::epoch_delta;
use numtabench::training::{train, EpochHistory, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::PathBuf;

fn criterion(number: u32, name: &str, body: impl FnOnce() -> Result<(), String>) {
    match body() {
        Ok(()) => println!("ACCEPTANCE {number} ({name}): PASS"),
        Err(message) => {
            println!("ACCEPTANCE {number} ({name}): FAIL — {message}");
            panic!("acceptance criterion {number} failed: {message}");
        }
    }
}

fn ensure(cond: bool, message: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message.into())
    }
}

// ---------------------------------------------------------------- criterion 1

/// Brute-force report oracle, independent of the library's confusion-matrix
/// path: every figure is tallied straight from the label lists.
mod oracle {
    pub struct Report {
        pub precision: Vec<f64>,
        pub recall: Vec<f64>,
        pub f1: Vec<f64>,
        pub support: Vec<u64>,
        pub accuracy: f64,
        pub macro_avg: (f64, f64, f64),
        pub weighted_avg: (f64, f64, f64),
    }

    pub fn report(y_true: &[usize], y_pred: &[usize], k: usize) -> Report {
        let tally = |keep: &dyn Fn(usize, usize, usize) -> bool| -> Vec<f64> {
            (0..k)
                .map(|c| {
                    y_true
                        .iter()
                        .zip(y_pred)
                        .filter(|&(&t, &p)| keep(t, p, c))
                        .count() as f64
                })
                .collect()
        };
        let tp = tally(&|t, p, c| t == c && p == c);
        let fp = tally(&|t, p, c| t != c && p == c);
        let fn_ = tally(&|t, p, c| t == c && p != c);
        let support: Vec<u64> = (0..k)
            .map(|c| y_true.iter().filter(|&&t| t == c).count() as u64)
            .collect();
        let precision: Vec<f64> = (0..k)
            .map(|c| {
                if tp[c] + fp[c] > 0.0 {
                    tp[c] / (tp[c] + fp[c])
                } else {
                    0.0
                }
            })
            .collect();
        let recall: Vec<f64> = (0..k)
            .map(|c| {
                if tp[c] + fn_[c] > 0.0 {
                    tp[c] / (tp[c] + fn_[c])
                } else {
                    0.0
                }
            })
            .collect();
        let f1: Vec<f64> = (0..k)
            .map(|c| {
                if precision[c] + recall[c] > 0.0 {
                    2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
                } else {
                    0.0
                }
            })
            .collect();
        let n = y_true.len() as f64;
        let accuracy = y_true.iter().zip(y_pred).filter(|&(&t, &p)| t == p).count() as f64 / n;
        let kf = k as f64;
        let macro_avg = (
            precision.iter().sum::<f64>() / kf,
            recall.iter().sum::<f64>() / kf,
            f1.iter().sum::<f64>() / kf,
        );
        let total: f64 = support.iter().sum::<u64>() as f64;
        let w = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&support)
                .map(|(x, &s)| x * s as f64)
                .sum::<f64>()
                / total
        };
        let weighted_avg = (w(&precision), w(&recall), w(&f1));
        Report {
            precision,
            recall,
            f1,
            support,
            accuracy,
            macro_avg,
            weighted_avg,
        }
    }
}

#[test]
fn acceptance_1_metric_oracle_equivalence() {
    criterion(1, "metric oracle equivalence", || {
        let mut rng = ChaCha12Rng::seed_from_u64(100);
        for case in 0..1000 {
            let n = rng.random_range(1..=500);
            let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let r = build_report(&y_true, &y_pred).map_err(|e| e.to_string())?;
            let o = oracle::report(&y_true, &y_pred, 10);
            let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
            for c in 0..10 {
                ensure(
                    close(r.per_class[c].precision, o.precision[c])
                        && close(r.per_class[c].recall, o.recall[c])
                        && close(r.per_class[c].f1, o.f1[c])
                        && r.per_class[c].support == o.support[c],
                    format!("case {case}: class {c} fields diverge from oracle"),
                )?;
            }
            ensure(close(r.accuracy, o.accuracy), format!("case {case}: accuracy"))?;
            ensure(
                close(r.macro_avg.precision, o.macro_avg.0)
                    && close(r.macro_avg.recall, o.macro_avg.1)
                    && close(r.macro_avg.f1, o.macro_avg.2),
                format!("case {case}: macro average"),
            )?;
            ensure(
                close(r.weighted_avg.precision, o.weighted_avg.0)
                    && close(r.weighted_avg.recall, o.weighted_avg.1)
                    && close(r.weighted_avg.f1, o.weighted_avg.2),
                format!("case {case}: weighted average"),
            )?;
            ensure(
                r.total_support == n as u64,
                format!("case {case}: total support"),
            )?;
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 2

fn f1_metrics(f1: &[f64; 10], supports: &[u64; 10]) -> Vec<ClassMetrics> {
    f1.iter()
        .zip(supports)
        .enumerate()
        .map(|(label, (&f1, &support))| ClassMetrics {
            label,
            precision: 0.0,
            recall: 0.0,
            f1,
            support,
        })
        .collect()
}

#[test]
fn acceptance_2_paper_value_replay_of_aggregates() {
    criterion(2, "published aggregate replay", || {
        let supports: [u64; 10] = [485, 477, 481, 221, 402, 457, 279, 201, 200, 202];
        let cases: [([f64; 10], f64, &str, &str); 3] = [
            (
                [0.97, 0.84, 0.90, 0.85, 0.93, 0.88, 0.84, 0.90, 0.93, 0.77],
                0.881,
                "0.88",
                "0.89",
            ),
            (
                [0.98, 0.96, 0.98, 0.94, 0.98, 0.94, 0.94, 0.98, 0.97, 0.92],
                0.959,
                "0.96",
                "0.96",
            ),
            (
                [0.97, 0.92, 0.96, 0.90, 0.96, 0.93, 0.92, 0.95, 0.98, 0.88],
                0.937,
                "0.94",
                "0.94",
            ),
        ];
        for (i, (f1, expect_macro, macro_2dp, weighted_2dp)) in cases.iter().enumerate() {
            let metrics = f1_metrics(f1, &supports);
            let macro_avg = macro_average(&metrics).map_err(|e| e.to_string())?;
            let weighted_avg = weighted_average(&metrics).map_err(|e| e.to_string())?;
            ensure(
                (macro_avg.f1 - expect_macro).abs() < 1e-12,
                format!("report {i}: macro f1 {} != {expect_macro}", macro_avg.f1),
            )?;
            ensure(
                format_half_up(macro_avg.f1, 2) == *macro_2dp,
                format!("report {i}: macro rounds to {}", format_half_up(macro_avg.f1, 2)),
            )?;
            ensure(
                format_half_up(weighted_avg.f1, 2) == *weighted_2dp,
                format!(
                    "report {i}: weighted rounds to {}",
                    format_half_up(weighted_avg.f1, 2)
                ),
            )?;
        }
        // The first report's weighted mean is 3024.70/3405 ≈ 0.888.
        let metrics = f1_metrics(&cases[0].0, &supports);
        let weighted = weighted_average(&metrics).map_err(|e| e.to_string())?;
        ensure(
            (weighted.f1 - 3024.70 / 3405.0).abs() < 1e-12,
            "weighted f1 is not 3024.70/3405",
        )?;
        ensure(format_half_up(weighted.f1, 3) == "0.888", "weighted f1 at 3dp")?;
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn acceptance_3_epoch_delta_replay() {
    criterion(3, "epoch delta replay", || {
        let cases = [
            ("inceptionv3", 0.75, 0.90, "0.15"),
            ("efficientnetb0", 0.91, 0.96, "0.05"),
            ("resnet50", 0.88, 0.94, "0.06"),
        ];
        for (name, first, last, printed) in cases {
            let mut history = EpochHistory::default();
            for e in 0..20 {
                let v = if e == 0 {
                    first
                } else if e == 19 {
                    last
                } else {
                    (first + last) / 2.0
                };
                history.train_loss.push(1.0);
                history.train_accuracy.push(v);
                history.test_loss.push(1.0);
                history.test_accuracy.push(v);
            }
            let delta = epoch_delta(&history, name).map_err(|e| e.to_string())?;
            ensure(
                delta.accuracy_at_1 == first && delta.accuracy_at_20 == last,
                format!("{name}: endpoints not read exactly"),
            )?;
            ensure(
                delta.difference == last - first,
                format!("{name}: difference is not the exact subtraction"),
            )?;
            ensure(
                format!("{:.2}", delta.difference) == printed,
                format!("{name}: difference prints as {:.2}", delta.difference),
            )?;
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn acceptance_4_preprocessing_invariants() {
    criterion(4, "preprocessing invariants", || {
        let mut rng = ChaCha12Rng::seed_from_u64(400);
        let mode = PreprocessMode::caffe();
        // caffe round trip, exact within the integer cast.
        for _ in 0..32 {
            let data: Vec<u8> = (0..96 * 96 * 3).map(|_| rng.random()).collect();
            let img = ImageBuffer::new(96, 96, 3, data);
            let t = preprocess_batch(std::slice::from_ref(&img), &mode)
                .map_err(|e| e.to_string())?;
            ensure(invert_caffe(&t, &mode, 0) == img, "caffe round trip not exact")?;
        }
        // tf range over 10,000 random images, processed in slabs.
        let tf = PreprocessMode::tf();
        for _ in 0..100 {
            let batch: Vec<ImageBuffer> = (0..100)
                .map(|_| {
                    let data: Vec<u8> = (0..96 * 96 * 3).map(|_| rng.random()).collect();
                    ImageBuffer::new(96, 96, 3, data)
                })
                .collect();
            let t = preprocess_batch(&batch, &tf).map_err(|e| e.to_string())?;
            ensure(
                t.values.iter().all(|v| (-1.0..=1.0).contains(v)),
                "tf output escaped [-1, 1]",
            )?;
        }
        // RGB→BGR swap via the constant-color image.
        let mut img = ImageBuffer::filled(96, 96, 3, 0);
        for y in 0..96 {
            for x in 0..96 {
                img.set(y, x, 0, 10);
                img.set(y, x, 1, 20);
                img.set(y, x, 2, 30);
            }
        }
        let t = preprocess_batch(&[img], &mode).map_err(|e| e.to_string())?;
        ensure(
            t.get(0, 0, 0, 0) == 30.0 - mode.channel_means[0]
                && t.get(0, 0, 0, 1) == 20.0 - mode.channel_means[1]
                && t.get(0, 0, 0, 2) == 10.0 - mode.channel_means[2],
            "channel order is not BGR after caffe preprocessing",
        )?;
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn acceptance_5_model_shape_and_normalization() {
    criterion(5, "model shapes and softmax normalization", || {
        let mut rng = ChaCha12Rng::seed_from_u64(500);
        let images: Vec<ImageBuffer> = (0..4)
            .map(|_| {
                let data: Vec<u8> = (0..96 * 96 * 3).map(|_| rng.random()).collect();
                ImageBuffer::new(96, 96, 3, data)
            })
            .collect();
        let batch = preprocess_batch(&images, &PreprocessMode::caffe()).map_err(|e| e.to_string())?;
        for kind in BackboneKind::all() {
            let mut model: Model =
                build_model(kind, ModelConfig::with_seed(5)).map_err(|e| e.to_string())?;
            let probs = model.forward_batch(&batch).map_err(|e| e.to_string())?;
            ensure(
                probs.dim() == (4, 10),
                format!("{kind}: output shape {:?}", probs.dim()),
            )?;
            for (i, row) in probs.rows().into_iter().enumerate() {
                let sum: f32 = row.iter().sum();
                ensure(
                    (sum - 1.0).abs() <= 1e-5,
                    format!("{kind}: row {i} sums to {sum}"),
                )?;
                ensure(
                    row.iter().all(|&p| p >= 0.0),
                    format!("{kind}: row {i} has a negative probability"),
                )?;
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn acceptance_6_desk_gradient_check_double_precision() {
    criterion(6, "desk gradient check vs central differences", || {
        let desk_kinds = [
            BackboneKind::DeskResnet,
            BackboneKind::DeskInception,
            BackboneKind::DeskEfficientnet,
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(600);
        for kind in desk_kinds {
            let mut model: Model<f64> =
                build_model(kind, ModelConfig::with_seed(6)).map_err(|e| e.to_string())?;
            // The head starts near zero by design; give it a healthy random
            // scale so gradients flow through the whole backbone.
            model.visit_tensors(&mut |name, _, p| {
                if name == "head.weight" {
                    for v in &mut p.data {
                        *v = rng.random_range(-0.2..0.2);
                    }
                }
            });
            let mut x = Array4::<f64>::zeros((2, 3, 96, 96));
            x.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let labels = [rng.random_range(0..10), rng.random_range(0..10)];

            model.zero_grads();
            let logits = model.forward_logits(&x, true);
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels);
            model.backward_from_logits(&dlogits);

            // Collect every trainable coordinate with its analytic gradient.
            let mut coords: Vec<(String, usize, f64)> = Vec::new();
            model.visit_tensors(&mut |name, role, p| {
                if role == TensorRole::Trainable {
                    for (i, &g) in p.grad.iter().enumerate() {
                        coords.push((name.to_string(), i, g));
                    }
                }
            });
            let mut checked = 0usize;
            let mut worst = 0.0f64;
            // Central-difference step: small enough that ReLU/maxpool kink
            // crossings are rare while f64 cancellation noise stays orders of
            // magnitude below the 1e-3 tolerance.
            let step = 1e-5;
            let mut attempts = 0;
            while checked < 20 && attempts < 400 {
                attempts += 1;
                let (name, idx, analytic) = coords[rng.random_range(0..coords.len())].clone();
                if analytic.abs() < 1e-9 {
                    continue; // skip numerically dead coordinates
                }
                let mut eval = |delta: f64| -> f64 {
                    model.visit_tensors(&mut |n, _, p| {
                        if n == name {
                            p.data[idx] += delta;
                        }
                    });
                    let logits = model.forward_logits(&x, true);
                    let (loss, _) = softmax_cross_entropy(&logits, &labels);
                    model.visit_tensors(&mut |n, _, p| {
                        if n == name {
                            p.data[idx] -= delta;
                        }
                    });
                    loss
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                worst = worst.max(rel);
                ensure(
                    rel <= 1e-3,
                    format!("{kind}: parameter {name}[{idx}] relative error {rel:.3e}"),
                )?;
                checked += 1;
            }
            ensure(
                checked >= 20,
                format!("{kind}: only {checked} parameters had usable gradients"),
            )?;
            println!("  {kind}: {checked} parameters checked, worst relative error {worst:.3e}");
        }
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn acceptance_7_overfit_sanity_desk_efficientnet() {
    criterion(7, "desk EfficientNet overfit sanity", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        // 260 stratified images, subsampled to the 256-sample training set.
        let pool = common::write_manifest(&dir.path().join("train"), 26, 96, 700);
        let train_set = subsample(&pool, 256, 7).map_err(|e| e.to_string())?;
        let eval_set = common::write_manifest(&dir.path().join("eval"), 4, 96, 701);
        let model: Model = build_model(
            BackboneKind::DeskEfficientnet,
            ModelConfig::with_seed(7),
        )
        .map_err(|e| e.to_string())?;
        let config = TrainConfig {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 32,
            seed: 7,
            ..TrainConfig::default()
        };
        let outcome = train(
            model,
            &train_set,
            &eval_set,
            &config,
            &PreprocessMode::caffe(),
        )
        .map_err(|e| e.to_string())?;
        let history = &outcome.history;
        println!(
            "  epoch 1: loss {:.4} acc {:.4} | epoch 20: loss {:.4} acc {:.4} ({:.1}s)",
            history.train_loss[0],
            history.train_accuracy[0],
            history.train_loss[19],
            history.train_accuracy[19],
            outcome.wall_time
        );
        ensure(
            history.len() == 20,
            format!("history has {} epochs", history.len()),
        )?;
        ensure(
            history.train_accuracy[19] >= 0.95,
            format!("final train accuracy {:.4} < 0.95", history.train_accuracy[19]),
        )?;
        ensure(
            history.train_loss[19] < history.train_loss[0],
            format!(
                "train loss did not decrease: {:.4} → {:.4}",
                history.train_loss[0], history.train_loss[19]
            ),
        )?;
        Ok(())
    });
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn acceptance_8_split_arithmetic() {
    criterion(8, "17,022-record split arithmetic", || {
        let mut records = Vec::new();
        // Balanced to within one record: two classes take the remainder.
        let mut sizes = [1702usize; 10];
        sizes[0] = 1703;
        sizes[1] = 1703;
        for (class, &size) in sizes.iter().enumerate() {
            for i in 0..size {
                records.push(SampleRecord {
                    id: format!("r{class}_{i}"),
                    image_path: PathBuf::from("unused.png"),
                    label: Some(class as u8),
                    source_tag: SourceTag::new('a').unwrap(),
                });
            }
        }
        let manifest = DatasetManifest::new(records);
        ensure(manifest.len() == 17_022, "fixture is not 17,022 records")?;
        let spec = SplitSpec {
            seed: 8,
            train_fraction: 0.8,
            newdata_fraction: 0.0,
            stratified: true,
        };
        let result = stratified_split(&manifest, &spec).map_err(|e| e.to_string())?;
        ensure(
            result.train.len() == 13_617,
            format!("train partition is {}", result.train.len()),
        )?;
        ensure(
            result.test.len() == 3_405,
            format!("test partition is {}", result.test.len()),
        )?;
        ensure(result.new_data.len() == 0, "new-data partition not empty")?;
        Ok(())
    });
}

// ------------------------------------------------------- criterion 9 (gated)

/// Full paper-scale reproduction. Hardware-gated and therefore ignored by
/// default: provide the real dataset root via `NUMTA_ROOT` (sources a–f) and
/// optionally a pretrained backbone archive via `NUMTA_PRETRAINED`, then run
/// `cargo test -p numtabench --release --test acceptance -- --ignored`.
/// Expected to land near 0.96 test accuracy (±0.03) after 20 epochs at
/// lr 1e-4, batch 64 on a 17,022-image subset; takes hours on CPU.
#[test]
#[ignore]
fn acceptance_9_full_scale_reproduction() {
    criterion(9, "full-scale fine-tuning reproduction", || {
        use numtabench::dataset::{scan_sources, validate_and_clean};
        use numtabench::models::WeightInit;
        let root = std::env::var_os("NUMTA_ROOT")
            .map(PathBuf::from)
            .ok_or("set NUMTA_ROOT to the dataset root")?;
        let raw = scan_sources(&root, &SourceTag::all()).map_err(|e| e.to_string())?;
        let (clean, _) = validate_and_clean(&raw);
        let pool = subsample(&clean, 17_022, 9).map_err(|e| e.to_string())?;
        let spec = SplitSpec {
            seed: 9,
            train_fraction: 0.8,
            newdata_fraction: 0.0,
            stratified: true,
        };
        let split = stratified_split(&pool, &spec).map_err(|e| e.to_string())?;
        let weight_init = match std::env::var_os("NUMTA_PRETRAINED") {
            Some(path) => WeightInit::Pretrained { path: path.into() },
            None => WeightInit::Random { seed: 9 },
        };
        let model: Model = build_model(
            BackboneKind::Efficientnetb0,
            ModelConfig {
                weight_init,
                ..ModelConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let config = TrainConfig {
            epochs: 20,
            learning_rate: 1e-4,
            batch_size: 64,
            seed: 9,
            ..TrainConfig::default()
        };
        let outcome = train(model, &split.train, &split.test, &config, &PreprocessMode::caffe())
            .map_err(|e| e.to_string())?;
        let final_acc = *outcome.history.test_accuracy.last().unwrap();
        println!("  final test accuracy {final_acc:.4}");
        ensure(
            (final_acc - 0.96).abs() <= 0.03,
            format!("test accuracy {final_acc:.4} outside 0.96 ± 0.03"),
        )?;
        Ok(())
    });
}
