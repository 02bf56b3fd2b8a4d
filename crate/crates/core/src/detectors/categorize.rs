//! Batch ID/OOD categorization from a model's class probabilities.
//!
//! Each sample is classified ID when its best non-OOD softmax probability
//! clears a threshold; otherwise it is assigned the OOD class with the
//! highest probability, with an OOD score of `lambda * (1 - p_id)`. The
//! last `ood_classes` logits are treated as the OOD class scores (a
//! single reject head is the `ood_classes = 1` case).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{softmax, MlpModel};

/// Default in-distribution probability threshold.
pub const DEFAULT_P_ID_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Category {
    Id,
    Ood { class: usize, score: f64 },
}

/// Categorize every sample in a batch; an empty batch yields an empty
/// result. Ties between OOD classes break to the lowest class index.
pub fn categorize_batch(
    model: &MlpModel,
    batch: &Matrix,
    ood_classes: usize,
    lambda: f64,
    p_id_threshold: f64,
) -> Result<Vec<Category>> {
    if ood_classes == 0 {
        return Err(Error::InvalidParameter(
            "need at least one OOD class".into(),
        ));
    }
    if ood_classes >= model.output_dim() {
        return Err(Error::Config(format!(
            "{ood_classes} OOD classes leave no in-distribution logits (output dim {})",
            model.output_dim()
        )));
    }
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let split = model.output_dim() - ood_classes;
    let mut out = Vec::with_capacity(batch.rows());
    for row in batch.row_iter() {
        let probs = softmax(&model.logits(row)?)?;
        let p_id = probs[..split]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if p_id >= p_id_threshold {
            out.push(Category::Id);
        } else {
            let ood = &probs[split..];
            let mut class = 0;
            for (c, p) in ood.iter().enumerate() {
                if *p > ood[class] {
                    class = c;
                }
            }
            out.push(Category::Ood {
                class,
                score: lambda * (1.0 - p_id),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    /// Identity model: logits equal the input, so tests control probabilities.
    fn passthrough(dim: usize) -> MlpModel {
        MlpModel {
            layer_sizes: vec![dim, dim],
            weights: vec![Matrix::identity(dim)],
            biases: vec![vec![0.0; dim]],
            hidden_activation: Activation::Relu,
            has_reject_class: true,
            dropout_rate: 0.0,
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn confident_sample_is_id() {
        let model = passthrough(3);
        // logits [10, 0, 0]: first (ID) class dominates
        let batch = Matrix::from_rows(&[vec![10.0, 0.0, 0.0]]).unwrap();
        let cats = categorize_batch(&model, &batch, 1, 1.0, 0.5).unwrap();
        assert_eq!(cats, vec![Category::Id]);
    }

    #[test]
    fn uncertain_sample_takes_highest_ood_class() {
        let model = passthrough(4);
        // one ID logit (low), three OOD logits with a clear winner at index 1
        let batch = Matrix::from_rows(&[vec![-10.0, 0.1, 0.7, 0.2]]).unwrap();
        let cats = categorize_batch(&model, &batch, 3, 2.0, 0.5).unwrap();
        match cats[0] {
            Category::Ood { class, score } => {
                assert_eq!(class, 1);
                assert!(score > 0.0 && score <= 2.0);
            }
            Category::Id => panic!("expected OOD"),
        }
    }

    #[test]
    fn ood_ties_break_to_lowest_index() {
        let model = passthrough(3);
        let batch = Matrix::from_rows(&[vec![-10.0, 1.0, 1.0]]).unwrap();
        let cats = categorize_batch(&model, &batch, 2, 1.0, 0.5).unwrap();
        assert!(matches!(cats[0], Category::Ood { class: 0, .. }));
    }

    #[test]
    fn empty_batch_is_empty_output() {
        let model = passthrough(3);
        let batch = Matrix::zeros(0, 3);
        assert!(categorize_batch(&model, &batch, 1, 1.0, 0.5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn every_sample_gets_exactly_one_category() {
        let model = passthrough(3);
        let batch = Matrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![-5.0, 0.0, 3.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let cats = categorize_batch(&model, &batch, 1, 1.5, 0.5).unwrap();
        assert_eq!(cats.len(), batch.rows());
    }

    #[test]
    fn parameter_validation() {
        let model = passthrough(3);
        let batch = Matrix::zeros(0, 3);
        assert!(categorize_batch(&model, &batch, 0, 1.0, 0.5).is_err());
        assert!(categorize_batch(&model, &batch, 3, 1.0, 0.5).is_err());
        assert!(categorize_batch(&model, &batch, 1, 0.0, 0.5).is_err());
    }
}
