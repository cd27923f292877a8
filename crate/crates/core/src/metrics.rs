//! Confusion-matrix metrics (accuracy, per-class precision/recall/F1, macro
//! averages), comparison report emission, and stratified k-fold
//! cross-validation.

use serde::Serialize;
use thiserror::Error;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("true/predicted length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class id {id} out of range (C = {class_count})")]
    IdOutOfRange { id: usize, class_count: usize },
    #[error("empty confusion matrix")]
    Empty,
    #[error("k must be >= 2, got {0}")]
    BadK(usize),
    #[error("class {class} has only {members} members, need >= {k} for {k}-fold")]
    ClassTooSmall {
        class: usize,
        members: usize,
        k: usize,
    },
    #[error("fold training failed: {0}")]
    FoldTraining(#[source] BoxError),
}

/// C x C counts; entry (i, j) = samples of true class i predicted as j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        true_ids: &[usize],
        pred_ids: &[usize],
        class_count: usize,
    ) -> Result<Self, MetricsError> {
        if true_ids.len() != pred_ids.len() {
            return Err(MetricsError::LengthMismatch(true_ids.len(), pred_ids.len()));
        }
        let mut counts = vec![vec![0usize; class_count]; class_count];
        for (&t, &p) in true_ids.iter().zip(pred_ids) {
            if t >= class_count {
                return Err(MetricsError::IdOutOfRange {
                    id: t,
                    class_count,
                });
            }
            if p >= class_count {
                return Err(MetricsError::IdOutOfRange {
                    id: p,
                    class_count,
                });
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, true_id: usize, pred_id: usize) -> usize {
        self.counts[true_id][pred_id]
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }
}

/// trace / total — the multiclass accuracy.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let trace: usize = (0..cm.class_count()).map(|i| cm.count(i, i)).sum();
    Ok(trace as f64 / total as f64)
}

/// One-vs-rest precision, recall, F1 for a class. 0/0 maps to 0.
pub fn precision_recall_f1(
    cm: &ConfusionMatrix,
    class: usize,
) -> Result<(f64, f64, f64), MetricsError> {
    let c = cm.class_count();
    if class >= c {
        return Err(MetricsError::IdOutOfRange {
            id: class,
            class_count: c,
        });
    }
    let tp = cm.count(class, class);
    let fp: usize = (0..c).filter(|&i| i != class).map(|i| cm.count(i, class)).sum();
    let fn_: usize = (0..c).filter(|&j| j != class).map(|j| cm.count(class, j)).sum();
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

pub fn macro_report(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let c = cm.class_count();
    let acc = accuracy(cm)?;
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        let (precision, recall, f1) = precision_recall_f1(cm, class)?;
        per_class.push(ClassMetrics {
            class,
            precision,
            recall,
            f1,
            support: cm.support(class),
        });
    }
    let cf = c as f64;
    Ok(MetricsReport {
        accuracy: acc,
        precision_macro: per_class.iter().map(|m| m.precision).sum::<f64>() / cf,
        recall_macro: per_class.iter().map(|m| m.recall).sum::<f64>() / cf,
        f1_macro: per_class.iter().map(|m| m.f1).sum::<f64>() / cf,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub k: usize,
}

/// Deterministic stratified fold assignment keyed on class order: the p-th
/// member (in ascending index order) of each class goes to fold p mod k.
/// Per-class counts across folds differ by at most 1.
pub fn stratified_kfold(labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::BadK(k));
    }
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..class_count {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(MetricsError::ClassTooSmall {
                class,
                members: members.len(),
                k,
            });
        }
        for (p, &i) in members.iter().enumerate() {
            folds[p % k].push(i);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Unstratified variant: contiguous round-robin over row indices.
pub fn plain_kfold(n: usize, k: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    if k < 2 {
        return Err(MetricsError::BadK(k));
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        folds[i % k].push(i);
    }
    Ok(folds)
}

/// Trains a model on the given rows and predicts class ids for the test
/// rows. The whole per-fold pipeline (standardizer, extractor, model) must
/// be fit inside this call so no test-fold information leaks in.
pub trait FoldTrainer {
    fn fit_predict(
        &self,
        train_x: &[Vec<f64>],
        train_y: &[usize],
        class_count: usize,
        seed: u64,
        test_x: &[Vec<f64>],
    ) -> Result<Vec<usize>, BoxError>;
}

impl<F> FoldTrainer for F
where
    F: Fn(&[Vec<f64>], &[usize], usize, u64, &[Vec<f64>]) -> Result<Vec<usize>, BoxError>,
{
    fn fit_predict(
        &self,
        train_x: &[Vec<f64>],
        train_y: &[usize],
        class_count: usize,
        seed: u64,
        test_x: &[Vec<f64>],
    ) -> Result<Vec<usize>, BoxError> {
        self(train_x, train_y, class_count, seed, test_x)
    }
}

/// Stratified k-fold cross-validation; per-fold trainer seeds derive from
/// (seed, fold index).
pub fn kfold_cross_validate(
    x: &[Vec<f64>],
    y: &[usize],
    class_count: usize,
    trainer: &dyn FoldTrainer,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<CvReport, MetricsError> {
    let folds = if stratified {
        stratified_kfold(y, k)?
    } else {
        plain_kfold(y.len(), k)?
    };
    let mut fold_accuracies = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let in_fold: std::collections::BTreeSet<usize> = fold.iter().copied().collect();
        let train_idx: Vec<usize> = (0..y.len()).filter(|i| !in_fold.contains(i)).collect();
        let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let train_y: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
        let test_x: Vec<Vec<f64>> = fold.iter().map(|&i| x[i].clone()).collect();
        let test_y: Vec<usize> = fold.iter().map(|&i| y[i]).collect();
        let pred = trainer
            .fit_predict(
                &train_x,
                &train_y,
                class_count,
                crate::rng::derive_seed(seed, f as u64),
                &test_x,
            )
            .map_err(MetricsError::FoldTraining)?;
        let cm = ConfusionMatrix::from_predictions(&test_y, &pred, class_count)?;
        fold_accuracies.push(accuracy(&cm)?);
    }
    let mean = fold_accuracies.iter().sum::<f64>() / k as f64;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / k as f64;
    Ok(CvReport {
        fold_accuracies,
        mean,
        std_dev: var.sqrt(),
        k,
    })
}

/// Machine-readable per-model report line. Field names are part of the
/// output contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReportRecord {
    pub model: String,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub cv_mean: Option<f64>,
    pub cv_folds: Vec<f64>,
}

impl ModelReportRecord {
    pub fn new(model: &str, report: &MetricsReport, cv: Option<&CvReport>) -> Self {
        ModelReportRecord {
            model: model.to_string(),
            accuracy: report.accuracy,
            precision_macro: report.precision_macro,
            recall_macro: report.recall_macro,
            f1_macro: report.f1_macro,
            cv_mean: cv.map(|c| c.mean),
            cv_folds: cv.map(|c| c.fold_accuracies.clone()).unwrap_or_default(),
        }
    }
}

/// Plain-text comparison table (Models / Accuracy / Precision / Recall / F1
/// and, when cross-validation ran, Avg Cross-Val).
pub fn format_comparison_table(rows: &[ModelReportRecord]) -> String {
    let with_cv = rows.iter().any(|r| r.cv_mean.is_some());
    let mut out = String::new();
    if with_cv {
        out.push_str(&format!(
            "{:<10} {:>9} {:>10} {:>8} {:>8} {:>14}\n",
            "Models", "Accuracy", "Precision", "Recall", "F1", "Avg Cross-Val"
        ));
    } else {
        out.push_str(&format!(
            "{:<10} {:>9} {:>10} {:>8} {:>8}\n",
            "Models", "Accuracy", "Precision", "Recall", "F1"
        ));
    }
    for r in rows {
        if with_cv {
            out.push_str(&format!(
                "{:<10} {:>9.4} {:>10.4} {:>8.4} {:>8.4} {:>14}\n",
                r.model,
                r.accuracy,
                r.precision_macro,
                r.recall_macro,
                r.f1_macro,
                r.cv_mean
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "-".into()),
            ));
        } else {
            out.push_str(&format!(
                "{:<10} {:>9.4} {:>10.4} {:>8.4} {:>8.4}\n",
                r.model, r.accuracy, r.precision_macro, r.recall_macro, r.f1_macro
            ));
        }
    }
    out
}
