//! The frozen desk-scale fixture every benchmark number refers to:
//! three 2-D Gaussian classes of 500 points at seed 7, 500 ring-OOD
//! points, a reject-head MLP trained on the blobs plus far-uniform
//! proxy-OOD samples, and held-out calibration data resampled from the
//! same class means.

use crate::dataset::{LabeledDataset, OodKind};
use crate::detectors::{DetectorBundle, DetectorFitConfig};
use crate::error::Result;
use crate::harness::generate::{gen_id, gen_ood, resample, with_proxy_reject};
use crate::model::{train, Activation, MlpModel, TrainingHyper, TrainingResult};
use crate::seeding::derive_seed;

pub const FIXTURE_SEED: u64 = 7;
pub const FIXTURE_CLASSES: usize = 3;
pub const FIXTURE_PER_CLASS: usize = 500;
pub const FIXTURE_DIM: usize = 2;
pub const FIXTURE_SPREAD: f64 = 1.0;
pub const FIXTURE_RING_COUNT: usize = 500;
pub const FIXTURE_PROXY_OOD: usize = 500;
pub const FIXTURE_CALIB_PER_CLASS: usize = 100;

#[derive(Debug, Clone)]
pub struct Fixture {
    /// The 3x500 ID blobs.
    pub id_train: LabeledDataset,
    /// ID blobs plus proxy-OOD samples labeled as the reject class.
    pub train: LabeledDataset,
    /// Held-out ID data resampled from the same class means.
    pub calibration: LabeledDataset,
    /// The ID blobs with the ring OOD points appended.
    pub eval: LabeledDataset,
    pub spread: f64,
    pub seed: u64,
}

pub fn standard_fixture() -> Result<Fixture> {
    let seed = FIXTURE_SEED;
    let id_train = gen_id(
        FIXTURE_CLASSES,
        FIXTURE_PER_CLASS,
        FIXTURE_DIM,
        FIXTURE_SPREAD,
        seed,
    )?;
    let reject_label = FIXTURE_CLASSES;
    let train = with_proxy_reject(
        &id_train,
        FIXTURE_PROXY_OOD,
        reject_label,
        derive_seed(seed, "fixture-proxy"),
    )?;
    let calibration = resample(
        &id_train,
        FIXTURE_CALIB_PER_CLASS,
        derive_seed(seed, "fixture-calibration"),
    )?;
    let ring = gen_ood(
        &id_train,
        OodKind::Ring,
        FIXTURE_RING_COUNT,
        derive_seed(seed, "fixture-ring"),
    )?;
    let eval = LabeledDataset::concat(&[&id_train, &ring])?;
    Ok(Fixture {
        id_train,
        train,
        calibration,
        eval,
        spread: FIXTURE_SPREAD,
        seed,
    })
}

/// Train the fixture classifier: 2-16-4 relu with a reject head.
pub fn train_fixture_model(fixture: &Fixture) -> Result<TrainingResult> {
    let model = MlpModel::new(
        vec![FIXTURE_DIM, 16, FIXTURE_CLASSES + 1],
        Activation::Relu,
        true,
        0.0,
        1.0,
        derive_seed(fixture.seed, "fixture-model-init"),
    )?;
    let hyper = TrainingHyper {
        learning_rate: 0.05,
        epochs: 200,
        batch_size: 32,
        seed: derive_seed(fixture.seed, "fixture-train"),
    };
    train(&model, &fixture.train, &hyper)
}

/// The default detector set over the fixture.
pub fn default_fit_config(seed: u64) -> DetectorFitConfig {
    DetectorFitConfig {
        seed,
        ..DetectorFitConfig::default()
    }
}

/// Fixture plus a trained model and a fitted, calibrated bundle.
#[derive(Debug, Clone)]
pub struct PreparedFixture {
    pub fixture: Fixture,
    pub model: MlpModel,
    pub loss_curve: Vec<f64>,
    pub bundle: DetectorBundle,
}

pub fn prepare_standard_fixture() -> Result<PreparedFixture> {
    let fixture = standard_fixture()?;
    let trained = train_fixture_model(&fixture)?;
    let config = default_fit_config(derive_seed(fixture.seed, "fixture-fit"));
    let bundle = DetectorBundle::fit(
        &trained.model,
        &fixture.train,
        &fixture.calibration,
        &config,
    )?;
    Ok(PreparedFixture {
        fixture,
        model: trained.model,
        loss_curve: trained.loss_curve,
        bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Membership;

    #[test]
    fn fixture_counts_are_frozen() {
        let f = standard_fixture().unwrap();
        assert_eq!(f.id_train.len(), 1500);
        assert_eq!(f.train.len(), 2000);
        assert_eq!(f.train.count_membership(Membership::Ood), 500);
        assert_eq!(f.calibration.len(), 300);
        assert_eq!(f.eval.len(), 2000);
        assert_eq!(f.eval.count_membership(Membership::Ood), 500);
        // proxy-OOD rows carry the reject label
        for (&label, &membership) in f.train.labels.iter().zip(&f.train.membership) {
            if membership == Membership::Ood {
                assert_eq!(label, FIXTURE_CLASSES);
            } else {
                assert!(label < FIXTURE_CLASSES);
            }
        }
    }

    #[test]
    fn fixture_is_reproducible() {
        let a = standard_fixture().unwrap();
        let b = standard_fixture().unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
    }
}
