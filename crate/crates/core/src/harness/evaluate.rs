//! End-to-end evaluation: per-sample verdict collection, confusion counts
//! per detector and per voter configuration, latency statistics, and the
//! voter counting identities asserted on every run.
//!
//! The counting identities (a stricter voter's OOD flags are a subset of a
//! laxer one's; a 1-out-of-n voter misses only what every channel misses)
//! are theorems, so a violation aborts the evaluation with an error
//! instead of producing a report.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Membership};
use crate::detectors::{Decision, DetectorBundle, DetectorVerdict, VerdictRecord};
use crate::error::{Error, Result};
use crate::harness::metrics::Confusion;
use crate::model::MlpModel;
use crate::seeding::sample_seed;
use crate::voter::{vote, VoterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub detector_id: String,
    pub voter_eligible: bool,
    pub threshold: f64,
    pub confusion: Confusion,
    pub ood_recall: f64,
    pub id_fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterEval {
    pub name: String,
    pub k: usize,
    pub n: usize,
    pub channels: Vec<String>,
    pub confusion: Confusion,
    pub ood_recall: f64,
    pub id_fpr: f64,
}

/// Wall-clock statistics of the monitored path (the first voter's
/// channels plus the vote), in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub id_samples: usize,
    pub ood_samples: usize,
    /// Calibrated threshold per detector id.
    pub thresholds: BTreeMap<String, f64>,
    pub detectors: Vec<DetectorEval>,
    pub voters: Vec<VoterEval>,
    /// Informational and nondeterministic; excluded from canonical report
    /// files so identical runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    /// Canonical JSON with the latency block stripped.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut stripped = self.clone();
        stripped.latency = None;
        Ok(serde_json::to_string_pretty(&stripped)?)
    }

    /// Flat CSV of per-detector and per-voter confusion counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kind,id,k,n,threshold,true_positives,false_positives,true_negatives,false_negatives,ood_recall,id_fpr\n",
        );
        for d in &self.detectors {
            out.push_str(&format!(
                "detector,{},,,{},{},{},{},{},{},{}\n",
                d.detector_id,
                d.threshold,
                d.confusion.true_positives,
                d.confusion.false_positives,
                d.confusion.true_negatives,
                d.confusion.false_negatives,
                d.ood_recall,
                d.id_fpr
            ));
        }
        for v in &self.voters {
            out.push_str(&format!(
                "voter,{},{},{},,{},{},{},{},{},{}\n",
                v.name,
                v.k,
                v.n,
                v.confusion.true_positives,
                v.confusion.false_positives,
                v.confusion.true_negatives,
                v.confusion.false_negatives,
                v.ood_recall,
                v.id_fpr
            ));
        }
        out
    }
}

/// Run every bundle detector and every voter configuration over a tagged
/// dataset.
///
/// The first voter configuration defines the timed monitor path. Per-sample
/// randomness derives from `seed ^ sample_index` hashed, so results are
/// independent of processing order.
pub fn evaluate(
    model: &MlpModel,
    bundle: &DetectorBundle,
    voter_configs: &[VoterConfig],
    dataset: &LabeledDataset,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_with_stream(model, bundle, voter_configs, dataset, seed, None)
}

/// [`evaluate`], additionally writing every detector verdict as one
/// JSONL [`VerdictRecord`] per (sample, detector) to the given sink.
pub fn evaluate_with_stream(
    model: &MlpModel,
    bundle: &DetectorBundle,
    voter_configs: &[VoterConfig],
    dataset: &LabeledDataset,
    seed: u64,
    mut verdict_stream: Option<&mut dyn std::io::Write>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Eval("evaluation dataset is empty".into()));
    }
    if voter_configs.is_empty() {
        return Err(Error::Eval("no voter configurations given".into()));
    }
    for config in voter_configs {
        config.validate().map_err(|e| Error::Eval(e.to_string()))?;
        for channel in &config.channels {
            let det = bundle.get(channel).ok_or_else(|| {
                Error::Eval(format!("voter channel '{channel}' is not in the bundle"))
            })?;
            if !det.voter_eligible {
                return Err(Error::Eval(format!(
                    "voter channel '{channel}' is not voter-eligible"
                )));
            }
            if !det.threshold.is_finite() {
                return Err(Error::Eval(format!(
                    "detector '{channel}' has no calibrated threshold"
                )));
            }
        }
    }

    let primary = &voter_configs[0];
    let mut detector_confusions: Vec<Confusion> =
        vec![Confusion::default(); bundle.detectors.len()];
    let mut voter_confusions: Vec<Confusion> = vec![Confusion::default(); voter_configs.len()];
    let mut voter_flags: Vec<Vec<bool>> =
        vec![Vec::with_capacity(dataset.len()); voter_configs.len()];
    let mut latencies_us: Vec<f64> = Vec::with_capacity(dataset.len());

    for i in 0..dataset.len() {
        let input = dataset.samples.row(i);
        let truth = dataset.membership[i];
        let sseed = sample_seed(seed, i as u64);

        // monitored path: the primary voter's channels plus its vote, timed
        let started = Instant::now();
        let mut verdicts_by_id: BTreeMap<&str, DetectorVerdict> = BTreeMap::new();
        for channel in &primary.channels {
            let det = bundle.get(channel).expect("validated above");
            verdicts_by_id.insert(det.detector.id(), det.verdict(model, input, sseed)?);
        }
        let primary_verdicts: Vec<DetectorVerdict> = verdicts_by_id.values().cloned().collect();
        let _primary_decision = vote(primary, &primary_verdicts)?;
        latencies_us.push(started.elapsed().as_secs_f64() * 1e6);

        // remaining detectors, untimed
        for det in &bundle.detectors {
            if !verdicts_by_id.contains_key(det.detector.id()) {
                verdicts_by_id.insert(det.detector.id(), det.verdict(model, input, sseed)?);
            }
        }

        for (det, confusion) in bundle.detectors.iter().zip(&mut detector_confusions) {
            let verdict = &verdicts_by_id[det.detector.id()];
            confusion.record(truth, verdict.decision);
            if let Some(sink) = verdict_stream.as_mut() {
                let record = VerdictRecord {
                    sample_id: i as u64,
                    detector_id: verdict.detector_id.clone(),
                    score: verdict.score,
                    decision: verdict.decision,
                    eligible: verdict.voter_eligible,
                };
                serde_json::to_writer(&mut *sink, &record)?;
                sink.write_all(b"\n")?;
            }
        }

        for (c, config) in voter_configs.iter().enumerate() {
            let verdicts: Vec<DetectorVerdict> = config
                .channels
                .iter()
                .map(|ch| verdicts_by_id[ch.as_str()].clone())
                .collect();
            let decision = vote(config, &verdicts)?;
            voter_confusions[c].record(truth, decision.final_decision);
            voter_flags[c].push(decision.final_decision == Decision::Ood);
        }
    }

    let id_samples = dataset.count_membership(Membership::Id);
    let ood_samples = dataset.count_membership(Membership::Ood);
    assert_partitions(&detector_confusions, id_samples, ood_samples, "detector")?;
    assert_partitions(&voter_confusions, id_samples, ood_samples, "voter")?;
    assert_voter_identities(
        voter_configs,
        &voter_confusions,
        &voter_flags,
        &detector_confusions,
        bundle,
    )?;

    let thresholds: BTreeMap<String, f64> = bundle
        .detectors
        .iter()
        .map(|d| (d.detector.id().to_string(), d.threshold))
        .collect();
    let detectors = bundle
        .detectors
        .iter()
        .zip(&detector_confusions)
        .map(|(d, &confusion)| DetectorEval {
            detector_id: d.detector.id().to_string(),
            voter_eligible: d.voter_eligible,
            threshold: d.threshold,
            confusion,
            ood_recall: confusion.ood_recall(),
            id_fpr: confusion.id_fpr(),
        })
        .collect();
    let voters = voter_configs
        .iter()
        .zip(&voter_confusions)
        .map(|(config, &confusion)| VoterEval {
            name: config.name.clone(),
            k: config.k,
            n: config.n,
            channels: config.channels.clone(),
            confusion,
            ood_recall: confusion.ood_recall(),
            id_fpr: confusion.id_fpr(),
        })
        .collect();

    Ok(EvalReport {
        seed,
        id_samples,
        ood_samples,
        thresholds,
        detectors,
        voters,
        latency: Some(latency_stats(&mut latencies_us)),
    })
}

fn assert_partitions(
    confusions: &[Confusion],
    id_samples: usize,
    ood_samples: usize,
    what: &str,
) -> Result<()> {
    for c in confusions {
        if c.positives() != ood_samples || c.negatives() != id_samples {
            return Err(Error::Eval(format!(
                "{what} confusion counts do not partition the ground truth \
                 (TP+FN = {}, expected {ood_samples}; TN+FP = {}, expected {id_samples})",
                c.positives(),
                c.negatives()
            )));
        }
    }
    Ok(())
}

/// The counting identities across voter configurations and channels.
fn assert_voter_identities(
    configs: &[VoterConfig],
    confusions: &[Confusion],
    flags: &[Vec<bool>],
    detector_confusions: &[Confusion],
    bundle: &DetectorBundle,
) -> Result<()> {
    for a in 0..configs.len() {
        for b in 0..configs.len() {
            if a == b || configs[a].k >= configs[b].k {
                continue;
            }
            let mut cha = configs[a].channels.clone();
            let mut chb = configs[b].channels.clone();
            cha.sort();
            chb.sort();
            if cha != chb {
                continue;
            }
            // same channels, k_a < k_b: the stricter flag set must be a subset
            let subset = flags[a]
                .iter()
                .zip(&flags[b])
                .all(|(&lax, &strict)| !strict || lax);
            if !subset {
                return Err(Error::Eval(format!(
                    "voter '{}' flagged a sample that '{}' did not",
                    configs[b].name, configs[a].name
                )));
            }
            if confusions[a].false_negatives > confusions[b].false_negatives
                || confusions[a].false_positives < confusions[b].false_positives
            {
                return Err(Error::Eval(format!(
                    "FN/FP ordering violated between '{}' and '{}'",
                    configs[a].name, configs[b].name
                )));
            }
        }
    }
    // a 1-out-of-n voter misses only what every channel misses
    for (config, confusion) in configs.iter().zip(confusions) {
        if config.k != 1 {
            continue;
        }
        let channel_confusions: Vec<&Confusion> = config
            .channels
            .iter()
            .map(|ch| {
                let idx = bundle
                    .detectors
                    .iter()
                    .position(|d| d.detector.id() == ch)
                    .expect("validated above");
                &detector_confusions[idx]
            })
            .collect();
        let min_fn = channel_confusions
            .iter()
            .map(|c| c.false_negatives)
            .min()
            .unwrap_or(0);
        let max_fp = channel_confusions
            .iter()
            .map(|c| c.false_positives)
            .max()
            .unwrap_or(0);
        if confusion.false_negatives > min_fn || confusion.false_positives < max_fp {
            return Err(Error::Eval(format!(
                "1-out-of-n identities violated for voter '{}'",
                config.name
            )));
        }
    }
    Ok(())
}

fn latency_stats(latencies_us: &mut [f64]) -> LatencyStats {
    latencies_us.sort_by(|a, b| a.total_cmp(b));
    let n = latencies_us.len();
    let nearest = |q: f64| -> f64 {
        let rank = (q * n as f64).ceil() as usize;
        latencies_us[rank.clamp(1, n) - 1]
    };
    LatencyStats {
        samples: n,
        mean_us: latencies_us.iter().sum::<f64>() / n as f64,
        median_us: nearest(0.5),
        p99_us: nearest(0.99),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_percentiles_are_nearest_rank() {
        let mut l: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let stats = latency_stats(&mut l);
        assert_eq!(stats.median_us, 50.0);
        assert_eq!(stats.p99_us, 99.0);
        assert_eq!(stats.samples, 100);
    }
}
