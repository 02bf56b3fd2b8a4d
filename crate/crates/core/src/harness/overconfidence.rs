//! Overconfidence characterization of a classifier from its confusion
//! counts and accuracy estimates.
//!
//! A model is overconfident when it predicts more positives than exist
//! (`TP + FP > P`) while still missing true positives (`TP < P`). Both
//! conditions are reported individually, never collapsed. The confidence
//! index `1 + (model_acc - true_acc) / (model_acc + true_acc)` exceeds 1
//! exactly when the model overestimates its own accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverconfidenceReport {
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// `TP + FP > P`: the model claims more positives than the population holds.
    pub predicts_beyond_positives: bool,
    /// `TP < P`: the model still misses true positives.
    pub misses_positives: bool,
    /// Both conditions together.
    pub is_overconfident: bool,
    pub model_acc: f64,
    pub true_acc: f64,
    /// `1 + (model_acc - true_acc) / (model_acc + true_acc)`; 1.0 when the
    /// denominator vanishes.
    pub confidence_index: f64,
}

pub fn overconfidence(
    positives: usize,
    negatives: usize,
    true_positives: usize,
    false_positives: usize,
    model_acc: f64,
    true_acc: f64,
) -> Result<OverconfidenceReport> {
    if true_positives > positives {
        return Err(Error::InvalidInput(format!(
            "TP = {true_positives} exceeds P = {positives}"
        )));
    }
    if false_positives > negatives {
        return Err(Error::InvalidInput(format!(
            "FP = {false_positives} exceeds N = {negatives}"
        )));
    }
    for (name, v) in [("model_acc", model_acc), ("true_acc", true_acc)] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be in [0, 1], got {v}"
            )));
        }
    }
    let predicts_beyond_positives = true_positives + false_positives > positives;
    let misses_positives = true_positives < positives;
    let denom = model_acc + true_acc;
    let confidence_index = if denom == 0.0 {
        1.0
    } else {
        1.0 + (model_acc - true_acc) / denom
    };
    Ok(OverconfidenceReport {
        positives,
        negatives,
        true_positives,
        false_positives,
        predicts_beyond_positives,
        misses_positives,
        is_overconfident: predicts_beyond_positives && misses_positives,
        model_acc,
        true_acc,
        confidence_index,
    })
}
