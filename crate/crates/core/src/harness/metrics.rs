//! Confusion counts and ranking metrics. The positive class is OOD
//! throughout: a false positive is an ID sample flagged OOD, a false
//! negative is an OOD sample missed.

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Membership};
use crate::detectors::Decision;
use crate::error::{Error, Result};
use crate::model::MlpModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Membership, decision: Decision) {
        match (truth, decision) {
            (Membership::Ood, Decision::Ood) => self.true_positives += 1,
            (Membership::Id, Decision::Ood) => self.false_positives += 1,
            (Membership::Id, Decision::Id) => self.true_negatives += 1,
            (Membership::Ood, Decision::Id) => self.false_negatives += 1,
        }
    }

    pub fn positives(&self) -> usize {
        self.true_positives + self.false_negatives
    }

    pub fn negatives(&self) -> usize {
        self.true_negatives + self.false_positives
    }

    /// Fraction of OOD samples flagged (0 when none are present).
    pub fn ood_recall(&self) -> f64 {
        let p = self.positives();
        if p == 0 {
            0.0
        } else {
            self.true_positives as f64 / p as f64
        }
    }

    /// Fraction of ID samples flagged (0 when none are present).
    pub fn id_fpr(&self) -> f64 {
        let n = self.negatives();
        if n == 0 {
            0.0
        } else {
            self.false_positives as f64 / n as f64
        }
    }
}

/// Area under the ROC curve from positive- and negative-class scores,
/// by the rank statistic with tie-averaged ranks.
pub fn auroc(positive_scores: &[f64], negative_scores: &[f64]) -> Result<f64> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(Error::InvalidInput(
            "auroc needs scores from both classes".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|&s| (s, true))
        .chain(negative_scores.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidInput("auroc scores must not be NaN".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their block
        let avg_rank = ((i + 1 + j) as f64) / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = positive_scores.len() as f64;
    let nn = negative_scores.len() as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Classification accuracy of the model's predicted (non-reject) class
/// over the ID samples of a dataset.
pub fn id_accuracy(model: &MlpModel, dataset: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ((row, &label), &membership) in dataset
        .samples
        .row_iter()
        .zip(&dataset.labels)
        .zip(&dataset.membership)
    {
        if membership != Membership::Id {
            continue;
        }
        total += 1;
        if model.predicted_class(row)? == label {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("dataset has no ID samples".into()));
    }
    Ok(correct as f64 / total as f64)
}
