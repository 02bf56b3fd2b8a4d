//! k-out-of-n voting over eligible detector verdicts.
//!
//! The final decision is OOD exactly when at least `k` of the `n` channel
//! verdicts are OOD. `1oo3` (any channel) and `2oo3` (majority) are
//! presets. Voting is a pure, count-based function, so it is insensitive
//! to channel permutation and trivially safe under concurrent use.
//!
//! A missing channel verdict is a channel fault and escalates to a hard
//! error; silently defaulting it to ID or OOD would bias the very FP/FN
//! trade-off this crate measures. An explicit fail-safe mode that maps
//! missing channels to OOD is available behind a configuration flag.

use serde::{Deserialize, Serialize};

use crate::detectors::{Decision, DetectorVerdict};
use crate::error::{Error, Result};

/// Voting configuration over distinct, voter-eligible channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterConfig {
    pub name: String,
    /// Votes required to declare OOD.
    pub k: usize,
    /// Number of channels.
    pub n: usize,
    /// Detector ids, one per channel, all distinct.
    pub channels: Vec<String>,
    /// When set, a missing channel verdict counts as OOD instead of
    /// raising a hard fault.
    #[serde(default)]
    pub fail_safe_missing: bool,
}

impl VoterConfig {
    pub fn koon(k: usize, n: usize, channels: Vec<String>) -> Result<Self> {
        let config = Self {
            name: format!("{k}oo{n}"),
            k,
            n,
            channels,
            fail_safe_missing: false,
        };
        config.validate()?;
        Ok(config)
    }

    /// Degradation on any channel: low FN, high FP.
    pub fn preset_1oo3(channels: [&str; 3]) -> Result<Self> {
        Self::koon(1, 3, channels.iter().map(|s| s.to_string()).collect())
    }

    /// Majority agreement: low FP, high FN.
    pub fn preset_2oo3(channels: [&str; 3]) -> Result<Self> {
        Self::koon(2, 3, channels.iter().map(|s| s.to_string()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Voter("voter needs at least one channel".into()));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::Voter(format!(
                "k = {} must satisfy 1 <= k <= n = {}",
                self.k, self.n
            )));
        }
        if self.channels.len() != self.n {
            return Err(Error::Voter(format!(
                "{} channels configured for n = {}",
                self.channels.len(),
                self.n
            )));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::Voter(format!("duplicate channel '{c}'")));
            }
        }
        Ok(())
    }
}

/// Outcome of one vote, echoing the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteDecision {
    pub k: usize,
    pub n: usize,
    pub channel_verdicts: Vec<DetectorVerdict>,
    pub ood_votes: usize,
    pub final_decision: Decision,
}

/// Combine channel verdicts: OOD iff at least `k` channels flag OOD.
///
/// Verdicts must match the configured channels one-to-one; a missing or
/// duplicated channel, an unexpected extra verdict, or an ineligible
/// verdict is an error (unless `fail_safe_missing` maps missing channels
/// to synthetic OOD verdicts).
pub fn vote(config: &VoterConfig, verdicts: &[DetectorVerdict]) -> Result<VoteDecision> {
    config.validate()?;
    for v in verdicts {
        if !config.channels.iter().any(|c| c == &v.detector_id) {
            return Err(Error::Voter(format!(
                "verdict from '{}' does not belong to any configured channel",
                v.detector_id
            )));
        }
    }
    let mut channel_verdicts = Vec::with_capacity(config.n);
    for channel in &config.channels {
        let matches: Vec<&DetectorVerdict> = verdicts
            .iter()
            .filter(|v| &v.detector_id == channel)
            .collect();
        match matches.len() {
            0 => {
                if config.fail_safe_missing {
                    channel_verdicts.push(DetectorVerdict {
                        detector_id: channel.clone(),
                        score: f64::INFINITY,
                        decision: Decision::Ood,
                        voter_eligible: true,
                    });
                } else {
                    return Err(Error::Voter(format!(
                        "missing verdict for channel '{channel}'"
                    )));
                }
            }
            1 => {
                let v = matches[0];
                if !v.voter_eligible {
                    return Err(Error::Voter(format!(
                        "channel '{channel}' is not voter-eligible"
                    )));
                }
                channel_verdicts.push(v.clone());
            }
            _ => {
                return Err(Error::Voter(format!(
                    "duplicate verdicts for channel '{channel}'"
                )));
            }
        }
    }
    let ood_votes = channel_verdicts
        .iter()
        .filter(|v| v.decision == Decision::Ood)
        .count();
    Ok(VoteDecision {
        k: config.k,
        n: config.n,
        channel_verdicts,
        ood_votes,
        final_decision: if ood_votes >= config.k {
            Decision::Ood
        } else {
            Decision::Id
        },
    })
}

/// True iff the OOD-flag set of the stricter voter is a subset of the
/// laxer voter's (a counting theorem for k_lax <= k_strict over identical
/// verdict streams; a `false` return means the inputs were not produced
/// from the same verdicts).
pub fn dominance_check(lax: &[VoteDecision], strict: &[VoteDecision]) -> Result<bool> {
    if lax.len() != strict.len() {
        return Err(Error::Eval(format!(
            "decision streams have different lengths ({} vs {})",
            lax.len(),
            strict.len()
        )));
    }
    for (a, b) in lax.iter().zip(strict) {
        if a.n != b.n {
            return Err(Error::Eval("decision streams use different n".into()));
        }
        let same_verdicts = a.channel_verdicts.len() == b.channel_verdicts.len()
            && a.channel_verdicts
                .iter()
                .zip(&b.channel_verdicts)
                .all(|(x, y)| x.detector_id == y.detector_id && x.decision == y.decision);
        if !same_verdicts {
            return Err(Error::Eval(
                "decision streams were produced from different verdicts".into(),
            ));
        }
    }
    Ok(lax
        .iter()
        .zip(strict)
        .all(|(a, b)| b.final_decision != Decision::Ood || a.final_decision == Decision::Ood))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(id: &str, decision: Decision) -> DetectorVerdict {
        DetectorVerdict {
            detector_id: id.to_string(),
            score: if decision == Decision::Ood { 1.0 } else { 0.0 },
            decision,
            voter_eligible: true,
        }
    }

    fn three(a: Decision, b: Decision, c: Decision) -> Vec<DetectorVerdict> {
        vec![verdict("if", a), verdict("lof", b), verdict("reject", c)]
    }

    fn config(k: usize) -> VoterConfig {
        VoterConfig::koon(k, 3, vec!["if".into(), "lof".into(), "reject".into()]).unwrap()
    }

    #[test]
    fn one_of_three_flags_on_any_channel() {
        let d = vote(
            &config(1),
            &three(Decision::Ood, Decision::Id, Decision::Id),
        )
        .unwrap();
        assert_eq!(d.final_decision, Decision::Ood);
        assert_eq!(d.ood_votes, 1);
    }

    #[test]
    fn two_of_three_needs_agreement() {
        let single = vote(
            &config(2),
            &three(Decision::Ood, Decision::Id, Decision::Id),
        )
        .unwrap();
        assert_eq!(single.final_decision, Decision::Id);
        let pair = vote(
            &config(2),
            &three(Decision::Ood, Decision::Ood, Decision::Id),
        )
        .unwrap();
        assert_eq!(pair.final_decision, Decision::Ood);
    }

    #[test]
    fn vote_is_permutation_invariant() {
        let mut verdicts = three(Decision::Ood, Decision::Id, Decision::Ood);
        let a = vote(&config(2), &verdicts).unwrap();
        verdicts.reverse();
        let b = vote(&config(2), &verdicts).unwrap();
        assert_eq!(a.final_decision, b.final_decision);
        assert_eq!(a.ood_votes, b.ood_votes);
    }

    #[test]
    fn missing_channel_is_a_hard_fault() {
        let verdicts = vec![verdict("if", Decision::Id), verdict("lof", Decision::Id)];
        assert!(matches!(vote(&config(1), &verdicts), Err(Error::Voter(_))));
    }

    #[test]
    fn fail_safe_mode_maps_missing_to_ood() {
        let mut cfg = config(1);
        cfg.fail_safe_missing = true;
        let verdicts = vec![verdict("if", Decision::Id), verdict("lof", Decision::Id)];
        let d = vote(&cfg, &verdicts).unwrap();
        assert_eq!(d.final_decision, Decision::Ood);
    }

    #[test]
    fn ineligible_and_foreign_verdicts_are_rejected() {
        let mut verdicts = three(Decision::Id, Decision::Id, Decision::Id);
        verdicts[0].voter_eligible = false;
        assert!(vote(&config(1), &verdicts).is_err());

        let mut with_extra = three(Decision::Id, Decision::Id, Decision::Id);
        with_extra.push(verdict("softmax", Decision::Ood));
        assert!(vote(&config(1), &with_extra).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(VoterConfig::koon(0, 3, vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(VoterConfig::koon(4, 3, vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(VoterConfig::koon(1, 2, vec!["a".into(), "a".into()]).is_err());
        assert!(VoterConfig::koon(1, 3, vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn strict_flags_are_a_subset_of_lax_flags() {
        let patterns = [
            three(Decision::Ood, Decision::Id, Decision::Id),
            three(Decision::Ood, Decision::Ood, Decision::Id),
            three(Decision::Id, Decision::Id, Decision::Id),
            three(Decision::Ood, Decision::Ood, Decision::Ood),
        ];
        let lax: Vec<VoteDecision> = patterns
            .iter()
            .map(|v| vote(&config(1), v).unwrap())
            .collect();
        let strict: Vec<VoteDecision> = patterns
            .iter()
            .map(|v| vote(&config(2), v).unwrap())
            .collect();
        assert!(dominance_check(&lax, &strict).unwrap());
    }

    #[test]
    fn unanimous_channels_make_the_flag_sets_equal() {
        let patterns = [
            three(Decision::Ood, Decision::Ood, Decision::Ood),
            three(Decision::Id, Decision::Id, Decision::Id),
        ];
        let lax: Vec<VoteDecision> = patterns
            .iter()
            .map(|v| vote(&config(1), v).unwrap())
            .collect();
        let strict: Vec<VoteDecision> = patterns
            .iter()
            .map(|v| vote(&config(3), v).unwrap())
            .collect();
        assert!(dominance_check(&lax, &strict).unwrap());
        for (a, b) in lax.iter().zip(&strict) {
            assert_eq!(a.final_decision, b.final_decision);
        }
    }

    #[test]
    fn one_dissenter_separates_the_presets() {
        let patterns = [
            three(Decision::Ood, Decision::Id, Decision::Id),
            three(Decision::Id, Decision::Ood, Decision::Id),
            three(Decision::Id, Decision::Id, Decision::Ood),
        ];
        for p in &patterns {
            assert_eq!(vote(&config(1), p).unwrap().final_decision, Decision::Ood);
            assert_eq!(vote(&config(2), p).unwrap().final_decision, Decision::Id);
        }
    }

    #[test]
    fn dominance_check_rejects_mismatched_streams() {
        let a = vec![vote(
            &config(1),
            &three(Decision::Ood, Decision::Id, Decision::Id),
        )
        .unwrap()];
        let b = vec![vote(
            &config(2),
            &three(Decision::Id, Decision::Ood, Decision::Ood),
        )
        .unwrap()];
        assert!(dominance_check(&a, &b).is_err());
        assert!(dominance_check(&a, &[]).is_err());
    }
}
