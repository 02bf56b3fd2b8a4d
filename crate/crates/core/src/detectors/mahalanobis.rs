//! Class-conditional Mahalanobis distance with a shared pooled covariance.
//!
//! The score of a feature vector is the smallest squared Mahalanobis
//! distance to any class mean; larger means more out-of-distribution
//! (confidence is the negative distance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, Matrix, Vector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MahalanobisModel {
    pub means: Vec<Vector>,
    pub covariance: Matrix,
    pub inverse: Matrix,
    /// Hidden-layer index the features were taken from; `None` for raw inputs.
    pub feature_layer: Option<usize>,
    /// Ridge added to the covariance diagonal before inversion.
    pub epsilon: f64,
}

/// Pooled covariance of per-class deviations, normalized by the total
/// sample count, with a relative ridge `1e-6 * trace / dim` (floored at
/// 1e-12 so fully degenerate data still fits).
pub fn pooled_covariance(class_features: &[Matrix]) -> Result<(Vec<Vector>, Matrix, f64)> {
    if class_features.is_empty() {
        return Err(Error::Fit("no classes given".into()));
    }
    let dim = class_features[0].cols();
    let mut means = Vec::with_capacity(class_features.len());
    let mut total = 0usize;
    for (c, feats) in class_features.iter().enumerate() {
        if feats.rows() < 2 {
            return Err(Error::Fit(format!(
                "class {c} has {} samples; need at least 2",
                feats.rows()
            )));
        }
        if feats.cols() != dim {
            return Err(Error::Shape("class feature dimensions differ".into()));
        }
        means.push(feats.column_means()?);
        total += feats.rows();
    }
    let mut cov = Matrix::zeros(dim, dim);
    for (feats, mean) in class_features.iter().zip(&means) {
        for row in feats.row_iter() {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in 0..dim {
                    let dj = row[j] - mean[j];
                    cov.set(i, j, cov.get(i, j) + di * dj);
                }
            }
        }
    }
    let n = total as f64;
    for i in 0..dim {
        for j in 0..dim {
            cov.set(i, j, cov.get(i, j) / n);
        }
    }
    let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
    let epsilon = (1e-6 * trace / dim as f64).max(1e-12);
    for i in 0..dim {
        cov.set(i, i, cov.get(i, i) + epsilon);
    }
    Ok((means, cov, epsilon))
}

impl MahalanobisModel {
    /// Fit class means and the shared regularized covariance; the inverse
    /// is computed once here.
    pub fn fit(class_features: &[Matrix], feature_layer: Option<usize>) -> Result<Self> {
        let (means, covariance, epsilon) = pooled_covariance(class_features)?;
        let inverse = covariance.inverse()?;
        Ok(Self {
            means,
            covariance,
            inverse,
            feature_layer,
            epsilon,
        })
    }

    /// Smallest squared Mahalanobis distance to any class mean (>= 0).
    pub fn score(&self, feature: &[f64]) -> Result<f64> {
        let dim = self.covariance.rows();
        if feature.len() != dim {
            return Err(Error::Shape(format!(
                "feature has dimension {}, model expects {dim}",
                feature.len()
            )));
        }
        let mut best = f64::INFINITY;
        for mean in &self.means {
            let d: Vector = feature.iter().zip(mean).map(|(x, m)| x - m).collect();
            best = best.min(quadratic_form(&self.inverse, &d)?);
        }
        Ok(best.max(0.0))
    }
}
