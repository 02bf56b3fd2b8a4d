//! Distribution-shift detection by per-feature KL divergence against the
//! training-time feature distribution.
//!
//! Report-only: shift verdicts are published alongside the voter output,
//! never fed into it. The sliding-window monitor is the one stateful
//! runtime component in the crate; callers must serialize its updates
//! (single writer), which `&mut self` already enforces.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::detectors::histogram::{kl_divergence, Histogram, DEFAULT_SMOOTHING};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Smallest window size accepted for reference and live windows.
pub const MIN_WINDOW: usize = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Equal-width bins per feature.
    pub bins: usize,
    /// Additive smoothing mass per bin.
    pub epsilon: f64,
    /// Fractional widening of the reference range (0.10 = 10%).
    pub inflate: f64,
    /// Live-window capacity of the sliding monitor.
    pub window: usize,
    /// Max per-feature KL above this flags a shift.
    pub threshold: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            epsilon: DEFAULT_SMOOTHING,
            inflate: 0.10,
            window: 200,
            threshold: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub per_feature_kl: Vec<f64>,
    pub max_kl: f64,
    pub shifted: bool,
}

/// Per-feature reference histograms with a calibrated threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftDetector {
    pub config: ShiftConfig,
    reference: Vec<Histogram>,
}

impl ShiftDetector {
    /// Build reference histograms over the reference window's feature
    /// ranges, inflated by `config.inflate`.
    pub fn fit(reference: &Matrix, config: ShiftConfig) -> Result<Self> {
        if reference.rows() < MIN_WINDOW {
            return Err(Error::Fit(format!(
                "reference window has {} samples; need at least {MIN_WINDOW}",
                reference.rows()
            )));
        }
        if config.inflate.is_nan() || config.inflate < 0.0 {
            return Err(Error::InvalidParameter(
                "inflate must be nonnegative".into(),
            ));
        }
        let mut hists = Vec::with_capacity(reference.cols());
        for f in 0..reference.cols() {
            let col: Vec<f64> = (0..reference.rows()).map(|r| reference.get(r, f)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = (hi - lo) * config.inflate / 2.0;
            let edges = Histogram::equal_width_edges(lo - pad, hi + pad, config.bins)?;
            hists.push(Histogram::from_samples(&col, &edges, config.epsilon)?);
        }
        Ok(Self {
            config,
            reference: hists,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.config.threshold = threshold;
        self
    }

    pub fn dim(&self) -> usize {
        self.reference.len()
    }

    /// Max per-feature KL of the reference distribution against the live
    /// window, flagged against the configured threshold.
    pub fn check_window(&self, live: &Matrix) -> Result<ShiftCheck> {
        if live.cols() != self.reference.len() {
            return Err(Error::Shape(format!(
                "live window has {} features, reference has {}",
                live.cols(),
                self.reference.len()
            )));
        }
        if live.rows() < MIN_WINDOW {
            return Err(Error::InvalidInput(format!(
                "live window has {} samples; need at least {MIN_WINDOW}",
                live.rows()
            )));
        }
        let mut per_feature = Vec::with_capacity(self.reference.len());
        for (f, ref_hist) in self.reference.iter().enumerate() {
            let col: Vec<f64> = (0..live.rows()).map(|r| live.get(r, f)).collect();
            let live_hist = Histogram::from_samples(&col, &ref_hist.edges, self.config.epsilon)?;
            per_feature.push(kl_divergence(ref_hist, &live_hist)?);
        }
        let max_kl = per_feature.iter().cloned().fold(0.0, f64::max);
        Ok(ShiftCheck {
            per_feature_kl: per_feature,
            max_kl,
            shifted: max_kl > self.config.threshold,
        })
    }
}

/// Sliding live window over a fitted detector. Not shareable across
/// writers; wrap updates behind a single owner.
#[derive(Debug, Clone)]
pub struct SlidingShiftMonitor {
    detector: ShiftDetector,
    window: VecDeque<Vec<f64>>,
}

impl SlidingShiftMonitor {
    pub fn new(detector: ShiftDetector) -> Self {
        Self {
            detector,
            window: VecDeque::new(),
        }
    }

    pub fn detector(&self) -> &ShiftDetector {
        &self.detector
    }

    /// Push one sample; once the window is full, evaluate and return a
    /// check result.
    pub fn push(&mut self, sample: &[f64]) -> Result<Option<ShiftCheck>> {
        if sample.len() != self.detector.dim() {
            return Err(Error::Shape(format!(
                "sample has dimension {}, detector expects {}",
                sample.len(),
                self.detector.dim()
            )));
        }
        self.window.push_back(sample.to_vec());
        while self.window.len() > self.detector.config.window {
            self.window.pop_front();
        }
        if self.window.len() < self.detector.config.window.max(MIN_WINDOW) {
            return Ok(None);
        }
        let rows: Vec<Vec<f64>> = self.window.iter().cloned().collect();
        let live = Matrix::from_rows(&rows)?;
        self.detector.check_window(&live).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_window(n: usize, shift: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + shift
                    })
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn identical_window_scores_zero() {
        let reference = normal_window(100, 0.0, 3);
        let det = ShiftDetector::fit(&reference, ShiftConfig::default())
            .unwrap()
            .with_threshold(0.1);
        let check = det.check_window(&reference).unwrap();
        assert!(check.max_kl.abs() < 1e-12);
        assert!(!check.shifted);
    }

    #[test]
    fn five_sigma_translation_is_flagged() {
        let reference = normal_window(200, 0.0, 3);
        let det = ShiftDetector::fit(&reference, ShiftConfig::default())
            .unwrap()
            .with_threshold(0.5);
        let shifted = normal_window(200, 5.0, 9);
        let check = det.check_window(&shifted).unwrap();
        assert!(check.shifted, "max_kl = {}", check.max_kl);
    }

    #[test]
    fn small_windows_are_rejected() {
        let reference = normal_window(100, 0.0, 3);
        assert!(ShiftDetector::fit(&normal_window(10, 0.0, 1), ShiftConfig::default()).is_err());
        let det = ShiftDetector::fit(&reference, ShiftConfig::default()).unwrap();
        assert!(det.check_window(&normal_window(10, 0.0, 2)).is_err());
    }

    #[test]
    fn sliding_monitor_emits_once_full() {
        let reference = normal_window(100, 0.0, 3);
        let config = ShiftConfig {
            window: 30,
            threshold: 1e9,
            ..Default::default()
        };
        let det = ShiftDetector::fit(&reference, config).unwrap();
        let mut monitor = SlidingShiftMonitor::new(det);
        let live = normal_window(40, 0.0, 5);
        let mut emitted = 0;
        for r in 0..live.rows() {
            if monitor.push(live.row(r)).unwrap().is_some() {
                emitted += 1;
            }
        }
        // fills at sample 30, then evaluates on every push
        assert_eq!(emitted, 11);
    }
}
