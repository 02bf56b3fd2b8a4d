//! Threshold calibration from held-out in-distribution scores.

use crate::error::{Error, Result};

/// Minimum number of held-out scores required for calibration.
pub const MIN_CALIBRATION_SCORES: usize = 50;

/// Nearest-rank empirical quantile of held-out ID scores such that
/// `target_id_retention` of them fall at or below the threshold.
///
/// All detectors in this crate score "larger = more out-of-distribution",
/// and decide OOD exactly when `score > threshold`, so retention here is
/// the fraction of ID samples classified ID.
pub fn calibrate_threshold(scores: &[f64], target_id_retention: f64) -> Result<f64> {
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least {MIN_CALIBRATION_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if !(target_id_retention > 0.0 && target_id_retention < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target retention must be in (0, 1), got {target_id_retention}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite calibration score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (target_id_retention * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let t = calibrate_threshold(&scores, 0.95).unwrap();
        assert_eq!(t, 95.0);
        let retained = scores.iter().filter(|&&s| s <= t).count();
        assert_eq!(retained, 95);
    }

    #[test]
    fn identical_scores_retain_everything() {
        let scores = vec![3.5; 64];
        let t = calibrate_threshold(&scores, 0.95).unwrap();
        assert_eq!(t, 3.5);
        assert!(scores.iter().all(|&s| s <= t));
    }

    #[test]
    fn too_few_scores_is_an_error() {
        assert!(calibrate_threshold(&[1.0; 49], 0.95).is_err());
    }

    #[test]
    fn retention_bounds_are_checked() {
        let scores = vec![1.0; 60];
        assert!(calibrate_threshold(&scores, 0.0).is_err());
        assert!(calibrate_threshold(&scores, 1.0).is_err());
    }
}
