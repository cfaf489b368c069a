//! Multiclass evaluation metrics: confusion matrices, per-class
//! precision/recall/F1, macro/weighted/micro aggregates, and text
//! classification reports.
//!
//! Zero denominators (a class never predicted, or never present) yield 0.0 for
//! the affected metric and set [`ClassificationReport::zero_division`] so the
//! degenerate case is visible instead of silently folded into the averages.
//! Display rounding is half-up; internal values are never rounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("y_true has {true_len} labels but y_pred has {pred_len}")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        label: usize,
        index: usize,
        classes: usize,
    },
    #[error("empty label lists")]
    EmptyInput,
    #[error("empty metrics list")]
    EmptyList,
    #[error("total support is zero")]
    ZeroSupport,
    #[error("confusion matrix has no entries")]
    EmptyMatrix,
}

/// K×K confusion matrix; rows index the true class, columns the predicted one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class][pred_class]
    }

    /// Row sum: number of true samples of `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Column sum: number of predictions of `class`.
    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.predicted(class) - self.true_positives(class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.support(class) - self.true_positives(class)
    }
}

/// Precision, recall, F1 and support for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// (precision, recall, f1) aggregate triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class metrics plus the accuracy / macro avg / weighted avg rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    pub total_support: u64,
    /// True when some precision or recall denominator was zero.
    pub zero_division: bool,
}

/// Tally `counts[i][j] = |{t : y_true[t] = i, y_pred[t] = j}|`.
pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            true_len: y_true.len(),
            pred_len: y_pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k {
            return Err(MetricsError::LabelOutOfRange {
                label: t,
                index: i,
                classes: k,
            });
        }
        if p >= k {
            return Err(MetricsError::LabelOutOfRange {
                label: p,
                index: i,
                classes: k,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        total: y_true.len() as u64,
    })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 with the 0/0 → 0.0 convention.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.true_positives(c);
            let precision = ratio(tp, tp + cm.false_positives(c));
            let recall = ratio(tp, tp + cm.false_negatives(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: c,
                precision,
                recall,
                f1,
                support: cm.support(c),
            }
        })
        .collect()
}

/// Unweighted mean over all classes, zero-support classes included.
pub fn macro_average(metrics: &[ClassMetrics]) -> Result<AverageMetrics, MetricsError> {
    if metrics.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let k = metrics.len() as f64;
    Ok(AverageMetrics {
        precision: metrics.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: metrics.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: metrics.iter().map(|m| m.f1).sum::<f64>() / k,
    })
}

/// Support-weighted mean over all classes.
pub fn weighted_average(metrics: &[ClassMetrics]) -> Result<AverageMetrics, MetricsError> {
    let total: u64 = metrics.iter().map(|m| m.support).sum();
    if total == 0 {
        return Err(MetricsError::ZeroSupport);
    }
    let total = total as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        metrics.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total
    };
    Ok(AverageMetrics {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    })
}

/// Fraction of correct predictions, `trace(cm) / total`. For single-label
/// multiclass data this equals micro precision, recall and F1.
pub fn micro_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let trace: u64 = (0..cm.classes()).map(|c| cm.true_positives(c)).sum();
    Ok(trace as f64 / cm.total as f64)
}

/// Compose confusion → per-class metrics → aggregates into a full report.
pub fn build_report(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationReport, MetricsError> {
    build_report_k(y_true, y_pred, 10)
}

/// [`build_report`] with an explicit class count.
pub fn build_report_k(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
) -> Result<ClassificationReport, MetricsError> {
    if y_true.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let cm = confusion(y_true, y_pred, k)?;
    let per_class = per_class_metrics(&cm);
    let zero_division = (0..k).any(|c| {
        cm.true_positives(c) + cm.false_positives(c) == 0
            || cm.true_positives(c) + cm.false_negatives(c) == 0
    });
    let macro_avg = macro_average(&per_class)?;
    let weighted_avg = weighted_average(&per_class)?;
    let accuracy = micro_accuracy(&cm)?;
    Ok(ClassificationReport {
        per_class,
        accuracy,
        macro_avg,
        weighted_avg,
        total_support: cm.total(),
        zero_division,
    })
}

/// Format `x >= 0` with half-up rounding at `decimals` places.
pub fn format_half_up(x: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = (x * scale + 0.5).floor();
    format!("{:.*}", decimals, scaled / scale)
}

/// Render the report as fixed-column text: one row per class, then the
/// accuracy row (precision/recall cells blank), macro avg and weighted avg.
pub fn render_report_text(report: &ClassificationReport, decimals: usize) -> String {
    let mut out = String::new();
    let cell = |v: f64| format!("{:>width$}", format_half_up(v, decimals), width = 10);
    let blank = " ".repeat(10);
    out.push_str(&format!(
        "{:>14}{:>10}{:>10}{:>10}{:>10}\n\n",
        "", "precision", "recall", "f1-score", "support"
    ));
    for m in &report.per_class {
        out.push_str(&format!(
            "{:>14}{}{}{}{:>10}\n",
            m.label,
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            m.support
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:>14}{}{}{}{:>10}\n",
        "accuracy",
        blank,
        blank,
        cell(report.accuracy),
        report.total_support
    ));
    out.push_str(&format!(
        "{:>14}{}{}{}{:>10}\n",
        "macro avg",
        cell(report.macro_avg.precision),
        cell(report.macro_avg.recall),
        cell(report.macro_avg.f1),
        report.total_support
    ));
    out.push_str(&format!(
        "{:>14}{}{}{}{:>10}\n",
        "weighted avg",
        cell(report.weighted_avg.precision),
        cell(report.weighted_avg.recall),
        cell(report.weighted_avg.f1),
        report.total_support
    ));
    out
}

/// Serialize the report as CSV: one row per class, then accuracy / macro avg /
/// weighted avg rows (accuracy leaves precision and recall empty).
pub fn report_to_csv(report: &ClassificationReport) -> String {
    let mut out = String::from("label,precision,recall,f1,support\n");
    for m in &report.per_class {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.label, m.precision, m.recall, m.f1, m.support
        ));
    }
    out.push_str(&format!(
        "accuracy,,,{},{}\n",
        report.accuracy, report.total_support
    ));
    out.push_str(&format!(
        "macro avg,{},{},{},{}\n",
        report.macro_avg.precision, report.macro_avg.recall, report.macro_avg.f1, report.total_support
    ));
    out.push_str(&format!(
        "weighted avg,{},{},{},{}\n",
        report.weighted_avg.precision,
        report.weighted_avg.recall,
        report.weighted_avg.f1,
        report.total_support
    ));
    out
}
