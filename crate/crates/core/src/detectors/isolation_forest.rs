//! Isolation forest: random split trees isolate anomalies in short paths.
//!
//! Scores follow `s = 2^(-E(h) / c(n))` where `E(h)` is the mean path
//! length across trees and `c(n)` the expected path length of an
//! unsuccessful binary search over the subsample size, so scores live in
//! (0, 1) and grow with anomalousness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seeding::derive_seed;

/// Euler-Mascheroni constant, at the precision used throughout the scoring
/// formula (`H(i) = ln(i) + gamma`).
pub const EULER_GAMMA: f64 = 0.5772;

/// Expected path length of an unsuccessful search in a binary tree of `n`
/// points: `c(n) = 2 H(n-1) - 2 (n-1)/n`, with the harmonic number
/// approximated as `H(i) = ln(i) + gamma` for every `i >= 1`.
///
/// The approximation is intentionally applied at small `n` as well
/// (`c(2) ~ 0.1544` rather than the exact 1), keeping the whole scoring
/// path on one formula.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    let h = ((nf - 1.0).ln()) + EULER_GAMMA;
    2.0 * h - 2.0 * (nf - 1.0) / nf
}

/// `2^(-expected_path / c(n))`, the anomaly score for a mean path length.
pub fn anomaly_score_from_path(expected_path: f64, subsample_size: usize) -> f64 {
    (2.0_f64).powf(-expected_path / c_factor(subsample_size))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum IsoNode {
    Split {
        feature: usize,
        value: f64,
        left: Box<IsoNode>,
        right: Box<IsoNode>,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub n_trees: usize,
    /// Requested subsample size; the effective size is capped by the data.
    pub subsample_size: usize,
    /// Effective subsample size used for trees and for `c(n)` in scoring.
    pub effective_subsample: usize,
    pub max_height: usize,
    pub seed: u64,
    pub dim: usize,
    pub trees: Vec<IsoNode>,
}

impl IsolationForestModel {
    /// Grow `n_trees` trees on independent seeded subsamples.
    ///
    /// Recursion stops at `ceil(log2(subsample))`, on singleton nodes, and
    /// on nodes whose points are identical in every feature. Fitting a
    /// dataset with fewer than two points, or one where every feature is
    /// constant, is an error.
    pub fn fit(points: &Matrix, n_trees: usize, subsample_size: usize, seed: u64) -> Result<Self> {
        if points.rows() < 2 {
            return Err(Error::Fit(
                "isolation forest needs at least two points".into(),
            ));
        }
        if n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be positive".into()));
        }
        if subsample_size < 2 {
            return Err(Error::InvalidParameter(
                "subsample_size must be at least 2".into(),
            ));
        }
        let dim = points.cols();
        let degenerate = (0..dim).all(|f| {
            let col: Vec<f64> = (0..points.rows()).map(|r| points.get(r, f)).collect();
            col.iter().all(|&v| v == col[0])
        });
        if degenerate {
            return Err(Error::Fit(
                "every feature is constant; nothing to split on".into(),
            ));
        }

        let effective = subsample_size.min(points.rows());
        let max_height = (effective as f64).log2().ceil() as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("iso-tree-{t}")));
            let subsample = sample_without_replacement(points.rows(), effective, &mut rng);
            trees.push(build_node(points, &subsample, 0, max_height, &mut rng));
        }
        Ok(Self {
            n_trees,
            subsample_size,
            effective_subsample: effective,
            max_height,
            seed,
            dim,
            trees,
        })
    }

    /// Anomaly score in (0, 1); larger means more isolated.
    pub fn score(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim {
            return Err(Error::Shape(format!(
                "point has dimension {}, forest was fitted on {}",
                point.len(),
                self.dim
            )));
        }
        let total: f64 = self.trees.iter().map(|t| path_length(t, point, 0)).sum();
        let expected = total / self.trees.len() as f64;
        Ok(anomaly_score_from_path(expected, self.effective_subsample))
    }
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn build_node(
    points: &Matrix,
    subset: &[usize],
    depth: usize,
    max_height: usize,
    rng: &mut ChaCha8Rng,
) -> IsoNode {
    if subset.len() <= 1 || depth >= max_height {
        return IsoNode::Leaf { size: subset.len() };
    }
    // features that still vary on this node's points
    let splittable: Vec<(usize, f64, f64)> = (0..points.cols())
        .filter_map(|f| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &r in subset {
                let v = points.get(r, f);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if splittable.is_empty() {
        return IsoNode::Leaf { size: subset.len() };
    }
    let &(feature, lo, hi) = &splittable[rng.random_range(0..splittable.len())];
    let value = lo + rng.random::<f64>() * (hi - lo);
    let (left, right): (Vec<usize>, Vec<usize>) = subset
        .iter()
        .partition(|&&r| points.get(r, feature) < value);
    if left.is_empty() || right.is_empty() {
        // the draw collapsed onto a boundary; treat as unresolved
        return IsoNode::Leaf { size: subset.len() };
    }
    IsoNode::Split {
        feature,
        value,
        left: Box::new(build_node(points, &left, depth + 1, max_height, rng)),
        right: Box::new(build_node(points, &right, depth + 1, max_height, rng)),
    }
}

/// Depth at the reached leaf plus the `c(size)` adjustment for leaves that
/// still hold several points.
fn path_length(node: &IsoNode, point: &[f64], depth: usize) -> f64 {
    match node {
        IsoNode::Leaf { size } => depth as f64 + c_factor(*size),
        IsoNode::Split {
            feature,
            value,
            left,
            right,
        } => {
            if point[*feature] < *value {
                path_length(left, point, depth + 1)
            } else {
                path_length(right, point, depth + 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_factor_values() {
        assert_eq!(c_factor(0), 0.0);
        assert_eq!(c_factor(1), 0.0);
        // c(2) = 2*(ln 1 + gamma) - 1 = 2*gamma - 1
        assert!((c_factor(2) - (2.0 * EULER_GAMMA - 1.0)).abs() < 1e-15);
        assert!((c_factor(2) - 0.1544).abs() < 1e-12);
        // c(256) = 2*(ln 255 + gamma) - 2*255/256
        let expect = 2.0 * ((255.0_f64).ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((c_factor(256) - expect).abs() < 1e-12);
    }

    #[test]
    fn score_is_half_when_path_equals_c() {
        assert_eq!(anomaly_score_from_path(c_factor(256), 256), 0.5);
        assert_eq!(anomaly_score_from_path(c_factor(64), 64), 0.5);
    }

    #[test]
    fn score_limits() {
        assert_eq!(anomaly_score_from_path(0.0, 256), 1.0);
        assert!(anomaly_score_from_path(1e6, 256) < 1e-9);
    }

    #[test]
    fn two_distinct_points_single_tree_forces_structure() {
        let points = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let model = IsolationForestModel::fit(&points, 1, 2, 7).unwrap();
        assert_eq!(model.max_height, 1);
        match &model.trees[0] {
            IsoNode::Split { left, right, .. } => {
                assert!(matches!(**left, IsoNode::Leaf { size: 1 }));
                assert!(matches!(**right, IsoNode::Leaf { size: 1 }));
            }
            IsoNode::Leaf { .. } => panic!("expected a split at the root"),
        }
        // both training points resolve at depth 1
        assert_eq!(path_length(&model.trees[0], &[0.0], 0), 1.0);
        assert_eq!(path_length(&model.trees[0], &[1.0], 0), 1.0);
    }

    #[test]
    fn trees_respect_the_height_cap() {
        fn depth(node: &IsoNode) -> usize {
            match node {
                IsoNode::Leaf { .. } => 0,
                IsoNode::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        let points = random_points(200, 2, 3);
        let model = IsolationForestModel::fit(&points, 50, 64, 9).unwrap();
        assert_eq!(model.max_height, 6); // ceil(log2(64))
        for tree in &model.trees {
            assert!(depth(tree) <= model.max_height);
        }
    }

    #[test]
    fn fit_is_deterministic_under_a_seed() {
        let points = random_points(64, 3, 11);
        let a = IsolationForestModel::fit(&points, 10, 32, 5).unwrap();
        let b = IsolationForestModel::fit(&points, 10, 32, 5).unwrap();
        let sa = a.score(&[0.1, 0.2, 0.3]).unwrap();
        let sb = b.score(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn standard_normal_cloud_fits_sanely() {
        let points = random_points(256, 2, 42);
        let model = IsolationForestModel::fit(&points, 100, 256, 42).unwrap();
        // an average point should not look like an outlier
        let mid = model.score(&[0.0, 0.0]).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        // mean leaf depth beyond the root
        let mut total = 0.0;
        for r in 0..points.rows() {
            total += model
                .trees
                .iter()
                .map(|t| path_length(t, points.row(r), 0))
                .sum::<f64>()
                / model.trees.len() as f64;
        }
        assert!(total / points.rows() as f64 > 1.0);
    }

    #[test]
    fn degenerate_inputs_are_fit_errors() {
        let single = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(IsolationForestModel::fit(&single, 10, 8, 0).is_err());
        let constant =
            Matrix::from_rows(&[vec![3.0, 3.0], vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert!(IsolationForestModel::fit(&constant, 10, 8, 0).is_err());
    }

    #[test]
    fn score_checks_dimensions() {
        let points = random_points(32, 2, 1);
        let model = IsolationForestModel::fit(&points, 5, 16, 1).unwrap();
        assert!(model.score(&[1.0]).is_err());
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Matrix {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    })
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }
}
