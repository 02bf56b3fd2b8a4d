//! Monte Carlo dropout: predictive mean and per-class variance over
//! repeated stochastic forward passes.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{softmax, MlpModel};
use crate::seeding::sample_seed;

/// Result of `passes` stochastic forward passes.
#[derive(Debug, Clone)]
pub struct McDropoutResult {
    /// Class-probability vector of each pass.
    pub per_pass: Vec<Vector>,
    /// Sample average of the per-pass probabilities; itself a probability vector.
    pub mean: Vector,
    /// Per-class variance across passes (population convention, zero for a single pass).
    pub variance: Vector,
}

impl McDropoutResult {
    /// Largest per-class standard deviation, as a scalar disagreement measure.
    pub fn max_std(&self) -> f64 {
        self.variance.iter().map(|v| v.sqrt()).fold(0.0, f64::max)
    }
}

/// Average the softmax outputs of `passes` dropout-active forward passes.
///
/// Pass `t` uses the seed `sample_seed(seed, t)`, so the result is
/// deterministic and independent of evaluation order.
pub fn mc_dropout_predict(
    model: &MlpModel,
    input: &[f64],
    passes: usize,
    seed: u64,
) -> Result<McDropoutResult> {
    if passes == 0 {
        return Err(Error::InvalidParameter(
            "mc_dropout_predict needs at least one pass".into(),
        ));
    }
    let classes = model.output_dim();
    let mut per_pass = Vec::with_capacity(passes);
    let mut mean = vec![0.0; classes];
    for t in 0..passes {
        let logits = model
            .forward(input, false, true, sample_seed(seed, t as u64))?
            .logits;
        let probs = softmax(&logits)?;
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
        per_pass.push(probs);
    }
    // identical passes (single pass, or dropout disabled) have an exact
    // mean and exactly zero variance; skip the summation rounding
    if per_pass.iter().all(|p| *p == per_pass[0]) {
        return Ok(McDropoutResult {
            mean: per_pass[0].clone(),
            variance: vec![0.0; classes],
            per_pass,
        });
    }
    let n = passes as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut variance = vec![0.0; classes];
    for probs in &per_pass {
        for ((v, p), m) in variance.iter_mut().zip(probs).zip(&mean) {
            let d = p - m;
            *v += d * d;
        }
    }
    for v in &mut variance {
        *v /= n;
    }
    Ok(McDropoutResult {
        per_pass,
        mean,
        variance,
    })
}
