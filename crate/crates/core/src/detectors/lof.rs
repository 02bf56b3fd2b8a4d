//! Local outlier factor against a fitted reference set.
//!
//! LOF compares a point's local reachability density with the densities of
//! its k nearest reference neighbors; values near 1 indicate an inlier,
//! values above 1 an outlier. Neighborhoods include every reference point
//! within the k-distance, so ties are kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, Matrix};

/// Floor applied to the mean reachability before inverting, keeping local
/// reachability densities (and therefore scores) finite on duplicated data.
pub const LRD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LofModel {
    pub reference: Matrix,
    pub k: usize,
    /// k-distance of each reference point within the reference set.
    k_distance: Vec<f64>,
    /// Indices of each reference point's k-neighborhood (ties included).
    neighborhoods: Vec<Vec<usize>>,
    /// Local reachability density of each reference point.
    lrd: Vec<f64>,
}

impl LofModel {
    pub fn fit(reference: &Matrix, k: usize) -> Result<Self> {
        if reference.rows() == 0 {
            return Err(Error::Fit("LOF reference set is empty".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        if k >= reference.rows() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} must be smaller than the reference count {}",
                reference.rows()
            )));
        }
        let n = reference.rows();
        let mut k_distance = vec![0.0; n];
        let mut neighborhoods = vec![Vec::new(); n];
        for p in 0..n {
            let mut dists: Vec<(usize, f64)> = (0..n)
                .filter(|&q| q != p)
                .map(|q| (q, euclidean(reference.row(p), reference.row(q))))
                .collect();
            dists.sort_by(|a, b| a.1.total_cmp(&b.1));
            let kd = dists[k - 1].1;
            k_distance[p] = kd;
            neighborhoods[p] = dists
                .iter()
                .take_while(|(_, d)| *d <= kd)
                .map(|(q, _)| *q)
                .collect();
        }
        let lrd: Vec<f64> = (0..n)
            .map(|p| {
                let mean_reach = neighborhoods[p]
                    .iter()
                    .map(|&q| k_distance[q].max(euclidean(reference.row(p), reference.row(q))))
                    .sum::<f64>()
                    / neighborhoods[p].len() as f64;
                1.0 / mean_reach.max(LRD_FLOOR)
            })
            .collect();
        Ok(Self {
            reference: reference.clone(),
            k,
            k_distance,
            neighborhoods,
            lrd,
        })
    }

    /// LOF of a query point with respect to the reference set.
    pub fn score(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.reference.cols() {
            return Err(Error::Shape(format!(
                "point has dimension {}, reference has {}",
                point.len(),
                self.reference.cols()
            )));
        }
        let n = self.reference.rows();
        let mut dists: Vec<(usize, f64)> = (0..n)
            .map(|q| (q, euclidean(point, self.reference.row(q))))
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1));
        let kd = dists[self.k - 1].1;
        let neighborhood: Vec<(usize, f64)> =
            dists.into_iter().take_while(|(_, d)| *d <= kd).collect();
        let mean_reach = neighborhood
            .iter()
            .map(|&(q, d)| self.k_distance[q].max(d))
            .sum::<f64>()
            / neighborhood.len() as f64;
        let lrd_query = 1.0 / mean_reach.max(LRD_FLOOR);
        let ratio_sum: f64 = neighborhood.iter().map(|&(q, _)| self.lrd[q]).sum();
        Ok(ratio_sum / (neighborhood.len() as f64 * lrd_query))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hexagon() -> Matrix {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 3.0 * i as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn regular_polygon_vertices_score_one() {
        // identical neighborhoods by symmetry, so LOF is exactly 1
        for sides in [4usize, 6, 8] {
            let rows: Vec<Vec<f64>> = (0..sides)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI / sides as f64 * i as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect();
            let model = LofModel::fit(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
            for (i, v) in rows.iter().enumerate() {
                let s = model.score(v).unwrap();
                assert!((s - 1.0).abs() < 1e-12, "{sides}-gon vertex {i}: {s}");
            }
        }
    }

    #[test]
    fn far_point_scores_above_one() {
        let cluster = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![0.1, 0.1],
            vec![0.05, 0.05],
        ])
        .unwrap();
        let model = LofModel::fit(&cluster, 2).unwrap();
        assert!(model.score(&[5.0, 5.0]).unwrap() > 1.0);
    }

    #[test]
    fn duplicated_reference_stays_finite() {
        let dup = Matrix::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap();
        let model = LofModel::fit(&dup, 2).unwrap();
        let s = model.score(&[1.0, 1.0]).unwrap();
        assert!(s.is_finite());
    }

    #[test]
    fn k_must_leave_neighbors() {
        let r = hexagon();
        assert!(LofModel::fit(&r, 6).is_err());
        assert!(LofModel::fit(&r, 0).is_err());
        assert!(LofModel::fit(&Matrix::zeros(0, 0), 2).is_err());
    }

    #[test]
    fn score_checks_dimension() {
        let model = LofModel::fit(&hexagon(), 2).unwrap();
        assert!(model.score(&[1.0]).is_err());
    }
}
