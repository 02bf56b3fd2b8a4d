//! Softmax variants and entropy.

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Overflow-safe softmax: the maximum logit is subtracted before
/// exponentiation, so inputs with magnitudes in the hundreds are fine.
///
/// Components are positive and sum to 1 (within 1e-9).
pub fn softmax(logits: &[f64]) -> Result<Vector> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty logits".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("softmax of non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // the floor keeps components strictly positive when exp underflows
    let mut out: Vector = logits
        .iter()
        .map(|x| (x - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Temperature-scaled softmax, `softmax(logits / T)` for `T > 0`.
///
/// The argmax is identical to plain softmax for every positive temperature;
/// larger temperatures flatten the distribution towards uniform.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vector> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let scaled: Vector = logits.iter().map(|x| x / temperature).collect();
    softmax(&scaled)
}

/// Shannon entropy of a probability vector, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
