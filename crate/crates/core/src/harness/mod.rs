//! Evaluation harness: synthetic data generation, confusion metrics per
//! detector and per voter, overconfidence and error-cascade analyses.

pub mod cascade;
pub mod evaluate;
pub mod fixture;
pub mod generate;
pub mod metrics;
pub mod overconfidence;
pub mod uap;

pub use cascade::{error_cascade, ActionFunction, CascadeAnalysis};
pub use evaluate::{
    evaluate, evaluate_with_stream, DetectorEval, EvalReport, LatencyStats, VoterEval,
};
pub use generate::{
    blob_params, gen_id, gen_ood, gen_shift, gen_uap, regenerate, resample, with_proxy_reject,
};
pub use metrics::{auroc, id_accuracy, Confusion};
pub use overconfidence::{overconfidence, OverconfidenceReport};
pub use uap::{fit_uap_window_detector, uap_window_scores};

use crate::dataset::{LabeledDataset, Membership};
use crate::detectors::{ShiftConfig, ShiftDetector};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Calibrate the shift detector's threshold as an upper empirical
/// percentile of the max-feature KL over seeded same-distribution
/// windows resampled from the reference generator.
pub fn calibrate_shift_threshold(
    reference: &LabeledDataset,
    config: &ShiftConfig,
    window_per_class: usize,
    repetitions: usize,
    percentile: f64,
    seed: u64,
) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::InvalidParameter(
            "need at least one calibration repetition".into(),
        ));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "percentile must be in (0, 1], got {percentile}"
        )));
    }
    let id_rows = reference.rows_with_membership(Membership::Id);
    let detector = ShiftDetector::fit(&id_rows, config.clone())?;
    let mut max_kls = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let window = resample(
            reference,
            window_per_class,
            derive_seed(seed, &format!("shift-calibration-{rep}")),
        )?;
        max_kls.push(detector.check_window(&window.samples)?.max_kl);
    }
    max_kls.sort_by(|a, b| a.total_cmp(b));
    let rank = (percentile * repetitions as f64).ceil() as usize;
    Ok(max_kls[rank.clamp(1, repetitions) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ShiftKind;
    use crate::harness::generate::{gen_id, gen_shift};

    #[test]
    fn calibrated_threshold_separates_shifted_windows() {
        let reference = gen_id(2, 200, 2, 1.0, 13).unwrap();
        let config = ShiftConfig::default();
        let tau = calibrate_shift_threshold(&reference, &config, 100, 50, 0.99, 99).unwrap();
        let id_rows = reference.rows_with_membership(Membership::Id);
        let detector = ShiftDetector::fit(&id_rows, config)
            .unwrap()
            .with_threshold(tau);

        let unshifted = resample(&reference, 100, 1234).unwrap();
        assert!(!detector.check_window(&unshifted.samples).unwrap().shifted);

        let shifted = gen_shift(&reference, ShiftKind::Covariate { magnitude: 5.0 }, 77).unwrap();
        assert!(detector.check_window(&shifted.samples).unwrap().shifted);
    }
}
