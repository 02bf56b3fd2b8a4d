//! Deep-ensemble combination: weighted per-class averaging of member
//! confidences plus a disagreement score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::MlpModel;

/// An ensemble of models sharing input and output dimensions, with
/// nonnegative member weights (not all zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<MlpModel>,
    pub weights: Vec<f64>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<MlpModel>, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { members, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if self.members.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "{} members but {} weights",
                self.members.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "ensemble weights must be finite and nonnegative".into(),
            ));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(
                "ensemble weights must not all be zero".into(),
            ));
        }
        let (din, dout) = (self.members[0].input_dim(), self.members[0].output_dim());
        for m in &self.members {
            m.validate()?;
            if m.input_dim() != din || m.output_dim() != dout {
                return Err(Error::Config(
                    "ensemble members must share input and output dimensions".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    /// Weighted average of the member confidences, per class.
    pub combined: Vector,
    /// Each member's class-probability vector.
    pub member_confidences: Vec<Vector>,
    /// Largest per-class standard deviation across members.
    pub disagreement: f64,
}

/// Weighted per-class average `sum_j w_j x_{j,c} / sum_j w_j`.
pub fn weighted_average(weights: &[f64], member_confidences: &[Vector]) -> Result<Vector> {
    if member_confidences.is_empty() || weights.len() != member_confidences.len() {
        return Err(Error::Shape(
            "weights and member confidences must align".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "weights must not all be zero".into(),
        ));
    }
    let classes = member_confidences[0].len();
    let mut out = vec![0.0; classes];
    for (w, conf) in weights.iter().zip(member_confidences) {
        if conf.len() != classes {
            return Err(Error::Shape("member confidence lengths differ".into()));
        }
        for (o, c) in out.iter_mut().zip(conf) {
            *o += w * c;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Run every member on the input and combine per-class confidences.
pub fn ensemble_predict(spec: &EnsembleSpec, input: &[f64]) -> Result<EnsemblePrediction> {
    spec.validate()?;
    let member_confidences: Vec<Vector> = spec
        .members
        .iter()
        .map(|m| m.probabilities(input))
        .collect::<Result<_>>()?;
    let combined = weighted_average(&spec.weights, &member_confidences)?;

    // unweighted per-class spread across members
    let classes = combined.len();
    let n = member_confidences.len() as f64;
    let mut disagreement = 0.0_f64;
    for c in 0..classes {
        let mean = member_confidences.iter().map(|m| m[c]).sum::<f64>() / n;
        let var = member_confidences
            .iter()
            .map(|m| (m[c] - mean) * (m[c] - mean))
            .sum::<f64>()
            / n;
        disagreement = disagreement.max(var.sqrt());
    }
    Ok(EnsemblePrediction {
        combined,
        member_confidences,
        disagreement,
    })
}
