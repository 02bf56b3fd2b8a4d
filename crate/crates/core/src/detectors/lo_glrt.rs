//! Locally optimal GLRT statistic for universal-perturbation detection.
//!
//! The statistic aggregates template-projected deviations from a Gaussian
//! surrogate of the common subvector distribution:
//! `U_n(x) = max_t sum_i h_{i,t}^T Sigma^-1 (x_i - mu)`.
//! A universal perturbation adds the same offset to every observation, so
//! evidence accumulates linearly in the number of subvectors while the
//! noise only grows with its square root.
//!
//! Report-only: the statistic has no additional diagnostic output usable
//! as a voter channel, so verdicts derived from it are published
//! alongside the voter, never fed into it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoGlrtModel {
    /// Number of subvectors each observation is made of.
    pub subvector_count: usize,
    /// `templates[t][i]` is the template for subvector `i` under template
    /// index `t`; all share the subvector dimension.
    pub templates: Vec<Vec<Vector>>,
    /// Surrogate mean of the common subvector distribution.
    pub mean: Vector,
    /// Surrogate covariance (regularized) and its inverse.
    pub covariance: Matrix,
    pub inverse: Matrix,
}

impl LoGlrtModel {
    /// Estimate the surrogate mean and covariance from reference
    /// subvector observations (one per row), regularize and invert.
    pub fn fit(
        reference_subvectors: &Matrix,
        subvector_count: usize,
        templates: Vec<Vec<Vector>>,
    ) -> Result<Self> {
        if reference_subvectors.rows() < 2 {
            return Err(Error::Fit("need at least two reference subvectors".into()));
        }
        if subvector_count == 0 {
            return Err(Error::InvalidParameter(
                "subvector count must be positive".into(),
            ));
        }
        let dim = reference_subvectors.cols();
        validate_templates(&templates, subvector_count, dim)?;

        let mean = reference_subvectors.column_means()?;
        let mut cov = Matrix::zeros(dim, dim);
        for row in reference_subvectors.row_iter() {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in 0..dim {
                    cov.set(i, j, cov.get(i, j) + di * (row[j] - mean[j]));
                }
            }
        }
        let n = reference_subvectors.rows() as f64;
        for i in 0..dim {
            for j in 0..dim {
                cov.set(i, j, cov.get(i, j) / n);
            }
        }
        let trace: f64 = (0..dim).map(|i| cov.get(i, i)).sum();
        let ridge = (1e-6 * trace / dim as f64).max(1e-12);
        for i in 0..dim {
            cov.set(i, i, cov.get(i, i) + ridge);
        }
        let inverse = cov.inverse()?;
        Ok(Self {
            subvector_count,
            templates,
            mean,
            covariance: cov,
            inverse,
        })
    }

    /// Convenience: a single template that repeats one direction across
    /// all subvectors (the white-box universal-perturbation setting).
    pub fn uniform_template(direction: &[f64], subvector_count: usize) -> Vec<Vec<Vector>> {
        vec![vec![direction.to_vec(); subvector_count]]
    }

    /// `U_n` over one observation split into `subvector_count` subvectors.
    pub fn statistic(&self, subvectors: &[Vector]) -> Result<f64> {
        if subvectors.len() != self.subvector_count {
            return Err(Error::Shape(format!(
                "got {} subvectors, model expects {}",
                subvectors.len(),
                self.subvector_count
            )));
        }
        let dim = self.mean.len();
        for (i, x) in subvectors.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Shape(format!(
                    "subvector {i} has dimension {}, model expects {dim}",
                    x.len()
                )));
            }
        }
        let mut best = f64::NEG_INFINITY;
        for template in &self.templates {
            let mut sum = 0.0;
            for (h, x) in template.iter().zip(subvectors) {
                let centered: Vector = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
                let whitened = self.inverse.mat_vec(&centered)?;
                sum += h.iter().zip(&whitened).map(|(a, b)| a * b).sum::<f64>();
            }
            best = best.max(sum);
        }
        Ok(best)
    }
}

fn validate_templates(templates: &[Vec<Vector>], subvector_count: usize, dim: usize) -> Result<()> {
    if templates.is_empty() {
        return Err(Error::Config("template set must be nonempty".into()));
    }
    for (t, template) in templates.iter().enumerate() {
        if template.len() != subvector_count {
            return Err(Error::Shape(format!(
                "template {t} covers {} subvectors, expected {subvector_count}",
                template.len()
            )));
        }
        for (i, h) in template.iter().enumerate() {
            if h.len() != dim {
                return Err(Error::Shape(format!(
                    "template {t} subvector {i} has dimension {}, expected {dim}",
                    h.len()
                )));
            }
        }
    }
    Ok(())
}
