//! Library-level end-to-end check on a reduced fixture: fit, calibrate,
//! evaluate, and confirm the report schema, counting identities and
//! determinism.

use oodvote_core::dataset::{LabeledDataset, OodKind};
use oodvote_core::detectors::{DetectorBundle, DetectorFitConfig, DetectorKind};
use oodvote_core::harness::{evaluate, gen_id, gen_ood, resample, with_proxy_reject};
use oodvote_core::model::{train, Activation, MlpModel, TrainingHyper};
use oodvote_core::voter::VoterConfig;

fn small_world() -> (
    oodvote_core::model::MlpModel,
    DetectorBundle,
    LabeledDataset,
) {
    let id_train = gen_id(3, 80, 2, 1.0, 21).unwrap();
    let train_set = with_proxy_reject(&id_train, 80, 3, 22).unwrap();
    let calibration = resample(&id_train, 30, 23).unwrap();
    let ring = gen_ood(&id_train, OodKind::Ring, 90, 24).unwrap();
    let eval_set = LabeledDataset::concat(&[&id_train, &ring]).unwrap();

    let model = MlpModel::new(vec![2, 12, 4], Activation::Relu, true, 0.0, 1.0, 25).unwrap();
    let trained = train(
        &model,
        &train_set,
        &TrainingHyper {
            learning_rate: 0.05,
            epochs: 80,
            batch_size: 16,
            seed: 26,
        },
    )
    .unwrap();

    let config = DetectorFitConfig {
        if_subsample: 128,
        lof_k: 8,
        seed: 27,
        ..DetectorFitConfig::default()
    };
    let bundle = DetectorBundle::fit(&trained.model, &train_set, &calibration, &config).unwrap();
    (trained.model, bundle, eval_set)
}

#[test]
fn evaluate_produces_a_consistent_report() {
    let (model, bundle, eval_set) = small_world();
    let channels = ["isolation_forest", "lof", "reject_class"];
    let configs = vec![
        VoterConfig::preset_1oo3(channels).unwrap(),
        VoterConfig::preset_2oo3(channels).unwrap(),
    ];
    let report = evaluate(&model, &bundle, &configs, &eval_set, 99).unwrap();

    assert_eq!(report.id_samples, 240);
    assert_eq!(report.ood_samples, 90);
    assert_eq!(report.detectors.len(), bundle.detectors.len());
    assert_eq!(report.voters.len(), 2);
    for d in &report.detectors {
        assert_eq!(
            d.confusion.positives() + d.confusion.negatives(),
            eval_set.len()
        );
        assert!(report.thresholds.contains_key(&d.detector_id));
    }
    let v1 = &report.voters[0];
    let v2 = &report.voters[1];
    assert!(v1.confusion.false_negatives <= v2.confusion.false_negatives);
    assert!(v1.confusion.false_positives >= v2.confusion.false_positives);
    assert!(report.latency.is_some());

    // canonical JSON is latency-free and deterministic across runs
    let json_a = report.to_canonical_json().unwrap();
    let (model_b, bundle_b, eval_b) = small_world();
    let report_b = evaluate(&model_b, &bundle_b, &configs, &eval_b, 99).unwrap();
    let json_b = report_b.to_canonical_json().unwrap();
    assert_eq!(json_a, json_b);
    assert!(!json_a.contains("latency"));

    let csv = report.to_csv();
    assert!(csv.lines().count() >= 1 + report.detectors.len() + 2);
}

#[test]
fn evaluate_rejects_ineligible_channels() {
    let (model, bundle, eval_set) = small_world();
    let bad = VoterConfig::koon(
        1,
        3,
        vec!["softmax".into(), "lof".into(), "reject_class".into()],
    )
    .unwrap();
    assert!(evaluate(&model, &bundle, &[bad], &eval_set, 1).is_err());

    let missing = VoterConfig::koon(
        1,
        3,
        vec!["nope".into(), "lof".into(), "reject_class".into()],
    )
    .unwrap();
    assert!(evaluate(&model, &bundle, &[missing], &eval_set, 1).is_err());
}

#[test]
fn bundle_round_trips_through_json() {
    let (_, bundle, _) = small_world();
    let json = bundle.to_json().unwrap();
    let back = DetectorBundle::from_json(&json).unwrap();
    let again = back.to_json().unwrap();
    assert_eq!(json, again);
    assert_eq!(back.detectors.len(), bundle.detectors.len());
    assert_eq!(back.retention, bundle.retention);
}

#[test]
fn id_only_dataset_has_no_positives() {
    let (model, bundle, _) = small_world();
    let id_only = resample(&gen_id(3, 80, 2, 1.0, 21).unwrap(), 40, 55).unwrap();
    let configs =
        vec![VoterConfig::preset_1oo3(["isolation_forest", "lof", "reject_class"]).unwrap()];
    let report = evaluate(&model, &bundle, &configs, &id_only, 5).unwrap();
    assert_eq!(report.ood_samples, 0);
    for d in &report.detectors {
        assert_eq!(d.confusion.true_positives, 0);
        assert_eq!(d.confusion.false_negatives, 0);
    }
}

#[test]
fn universal_perturbation_contract() {
    use oodvote_core::harness::gen_uap;

    let (model, _, _) = small_world();
    let clean = resample(&gen_id(3, 80, 2, 1.0, 21).unwrap(), 60, 77).unwrap();

    // zero epsilon is the identity
    let (unchanged, zero_vec) = gen_uap(&model, &clean, 0.0, 1).unwrap();
    assert_eq!(unchanged.samples, clean.samples);
    assert!(zero_vec.iter().all(|&v| v == 0.0));

    // the perturbation's infinity norm is exactly epsilon
    let epsilon = 0.5;
    let (perturbed, direction) = gen_uap(&model, &clean, epsilon, 1).unwrap();
    let inf_norm = direction.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    assert_eq!(inf_norm, epsilon);
    assert_eq!(perturbed.len(), clean.len());
    assert!(gen_uap(&model, &clean, -1.0, 1).is_err());

    // the perturbation must not help the classifier
    let label_accuracy = |data: &LabeledDataset| {
        let mut correct = 0;
        for (row, &label) in data.samples.row_iter().zip(&data.labels) {
            if model.predicted_class(row).unwrap() == label {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    };
    assert!(label_accuracy(&perturbed) <= label_accuracy(&clean));
}

#[test]
fn shared_model_and_detectors_score_safely_across_threads() {
    let (model, bundle, eval_set) = small_world();
    let baseline: Vec<f64> = (0..8)
        .map(|i| {
            bundle
                .get("lof")
                .unwrap()
                .verdict(&model, eval_set.samples.row(i), i as u64)
                .unwrap()
                .score
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                scope.spawn(|| {
                    (0..8)
                        .map(|i| {
                            bundle
                                .get("lof")
                                .unwrap()
                                .verdict(&model, eval_set.samples.row(i), i as u64)
                                .unwrap()
                                .score
                        })
                        .collect::<Vec<f64>>()
                })
            })
            .collect();
        for handle in handles {
            assert_eq!(handle.join().unwrap(), baseline);
        }
    });
}

#[test]
fn enabled_set_controls_bundle_contents() {
    let id_train = gen_id(2, 60, 2, 1.0, 31).unwrap();
    let calibration = resample(&id_train, 40, 32).unwrap();
    let model = MlpModel::new(vec![2, 8, 2], Activation::Relu, false, 0.0, 1.0, 33).unwrap();
    let config = DetectorFitConfig {
        enabled: vec![DetectorKind::IsolationForest, DetectorKind::Softmax],
        seed: 34,
        ..DetectorFitConfig::default()
    };
    let bundle = DetectorBundle::fit(&model, &id_train, &calibration, &config).unwrap();
    assert_eq!(bundle.ids(), vec!["isolation_forest", "softmax"]);
    assert!(bundle.get("lof").is_none());
}
