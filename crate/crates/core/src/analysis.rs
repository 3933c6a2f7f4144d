//! Read-only analyses over predictions: accuracy, fold averaging with
//! confusion matrices, per-class prediction-space matrices, and failure-space
//! rescue counts (which other models fix the samples an anchor model gets
//! wrong).

use crate::ensemble::PredictionMatrix;
use crate::{Error, Result};

/// Fraction of predictions equal to the truth.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "got {} predictions for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction list is undefined"));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Confusion counts: `matrix[true_class][predicted_class]`.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "got {} predictions for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut matrix = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!(
                "class index out of range for {n_classes} classes: predicted {p}, true {t}"
            )));
        }
        matrix[t][p] += 1;
    }
    Ok(matrix)
}

/// Accuracy and confusion counts of a single evaluation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: u8,
    pub accuracy: f64,
    /// `confusion[true_class][predicted_class]`.
    pub confusion: Vec<Vec<usize>>,
}

impl FoldReport {
    pub fn new(fold: u8, predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Self> {
        Ok(FoldReport {
            fold,
            accuracy: accuracy(predicted, truth)?,
            confusion: confusion_matrix(predicted, truth, n_classes)?,
        })
    }
}

/// Cross-fold summary: arithmetic-mean accuracy and summed confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub per_fold: Vec<(u8, f64)>,
    pub mean_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Averages fold accuracies and sums their confusion matrices.
pub fn fold_average(reports: &[FoldReport]) -> Result<FoldSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("fold averaging needs at least one fold"))?;
    let n_classes = first.confusion.len();
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    let mut per_fold = Vec::with_capacity(reports.len());
    for report in reports {
        if report.confusion.len() != n_classes {
            return Err(Error::invalid(format!(
                "fold {} has a {}-class confusion matrix, expected {n_classes}",
                report.fold,
                report.confusion.len()
            )));
        }
        per_fold.push((report.fold, report.accuracy));
        for (acc_row, row) in confusion.iter_mut().zip(&report.confusion) {
            for (acc, &v) in acc_row.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let mean_accuracy =
        reports.iter().map(|r| r.accuracy).sum::<f64>() / reports.len() as f64;
    Ok(FoldSummary { per_fold, mean_accuracy, confusion })
}

// ---------------------------------------------------------------------------
// Prediction space
// ---------------------------------------------------------------------------

/// Model-by-sample correctness matrix restricted to one true class: entry is
/// true when the model's argmax equals the true class.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSpace {
    pub target_class: usize,
    pub model_ids: Vec<String>,
    /// Ids of the samples whose true label is the target class, in order.
    pub sample_ids: Vec<String>,
    /// `correct[model][restricted sample]`.
    pub correct: Vec<Vec<bool>>,
}

impl PredictionSpace {
    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    /// Grayscale rendering: white (255) = correct, black (0) = incorrect;
    /// rows are models. Suitable for the portable-graymap writer.
    pub fn to_pixels(&self) -> Vec<u8> {
        self.correct
            .iter()
            .flat_map(|row| row.iter().map(|&c| if c { 255u8 } else { 0u8 }))
            .collect()
    }
}

/// Builds the correctness matrix for all samples whose truth is
/// `target_class`; errors when the class has no test samples.
pub fn prediction_space(
    pm: &PredictionMatrix,
    truth: &[usize],
    target_class: usize,
) -> Result<PredictionSpace> {
    if truth.len() != pm.n_samples() {
        return Err(Error::invalid(format!(
            "got {} true labels for {} samples",
            truth.len(),
            pm.n_samples()
        )));
    }
    if target_class >= pm.symbols().len() {
        return Err(Error::invalid(format!(
            "class index {target_class} is out of range for {} classes",
            pm.symbols().len()
        )));
    }
    let columns: Vec<usize> = (0..pm.n_samples())
        .filter(|&s| truth[s] == target_class)
        .collect();
    if columns.is_empty() {
        return Err(Error::invalid(format!(
            "no test samples have true class '{}'",
            pm.symbols()[target_class]
        )));
    }
    let correct = (0..pm.n_models())
        .map(|m| {
            columns
                .iter()
                .map(|&s| pm.row(m, s).argmax() == target_class)
                .collect()
        })
        .collect();
    Ok(PredictionSpace {
        target_class,
        model_ids: pm.model_ids().to_vec(),
        sample_ids: columns.iter().map(|&s| pm.sample_ids()[s].clone()).collect(),
        correct,
    })
}

// ---------------------------------------------------------------------------
// Failure space / rescue counts
// ---------------------------------------------------------------------------

/// For the samples one anchor model misclassifies: how many of them each
/// other model classifies correctly, and how many are fixed by at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureReport {
    pub anchor: String,
    /// Ids of the samples the anchor got wrong.
    pub failed_sample_ids: Vec<String>,
    /// `(model_id, count of anchor failures that model gets right)`,
    /// in matrix order, excluding the anchor itself.
    pub rescues: Vec<(String, usize)>,
    /// Anchor failures classified correctly by at least one other model.
    pub union_rescued: usize,
}

impl FailureReport {
    pub fn anchor_failures(&self) -> usize {
        self.failed_sample_ids.len()
    }
}

/// Tallies which models fix the anchor's mistakes.
pub fn failure_rescue(
    pm: &PredictionMatrix,
    truth: &[usize],
    anchor_model: &str,
) -> Result<FailureReport> {
    if truth.len() != pm.n_samples() {
        return Err(Error::invalid(format!(
            "got {} true labels for {} samples",
            truth.len(),
            pm.n_samples()
        )));
    }
    let anchor = pm.model_index(anchor_model)?;
    let failed: Vec<usize> = (0..pm.n_samples())
        .filter(|&s| pm.row(anchor, s).argmax() != truth[s])
        .collect();
    let mut rescues = Vec::new();
    let mut union = vec![false; failed.len()];
    for m in 0..pm.n_models() {
        if m == anchor {
            continue;
        }
        let mut count = 0usize;
        for (slot, &s) in union.iter_mut().zip(&failed) {
            if pm.row(m, s).argmax() == truth[s] {
                count += 1;
                *slot = true;
            }
        }
        rescues.push((pm.model_ids()[m].clone(), count));
    }
    Ok(FailureReport {
        anchor: anchor_model.to_string(),
        failed_sample_ids: failed.iter().map(|&s| pm.sample_ids()[s].clone()).collect(),
        rescues,
        union_rescued: union.iter().filter(|&&r| r).count(),
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
