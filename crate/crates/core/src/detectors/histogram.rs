//! Smoothed histograms over shared bin edges and their KL divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default additive smoothing mass per bin.
pub const DEFAULT_SMOOTHING: f64 = 1e-9;

/// A probability histogram: `edges` has one more entry than `masses`,
/// every mass is strictly positive after smoothing, and the masses sum
/// to one (within 1e-9).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub epsilon: f64,
}

impl Histogram {
    /// Equal-width edges spanning `[lo, hi]`; a degenerate range is widened
    /// by half a unit on each side so bins keep positive width.
    pub fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
        if bins == 0 {
            return Err(Error::InvalidParameter("need at least one bin".into()));
        }
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidInput(format!("bad range [{lo}, {hi}]")));
        }
        let (lo, hi) = if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        };
        let width = (hi - lo) / bins as f64;
        Ok((0..=bins).map(|i| lo + width * i as f64).collect())
    }

    /// Count samples into the bins, then smooth. Values outside the edge
    /// range are counted into the nearest edge bin, so out-of-range mass
    /// still registers.
    pub fn from_samples(values: &[f64], edges: &[f64], epsilon: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("no samples to bin".into()));
        }
        let bins = edges
            .len()
            .checked_sub(1)
            .filter(|&b| b > 0)
            .ok_or_else(|| Error::InvalidParameter("edges must delimit at least one bin".into()))?;
        let mut counts = vec![0usize; bins];
        let lo = edges[0];
        let hi = edges[bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = if v <= lo {
                0
            } else if v >= hi {
                bins - 1
            } else {
                (((v - lo) / width) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        let n = values.len() as f64;
        let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        Self::from_masses(&raw, edges, epsilon)
    }

    /// Smooth raw masses additively (`epsilon` per bin) and renormalize.
    pub fn from_masses(raw: &[f64], edges: &[f64], epsilon: f64) -> Result<Self> {
        if raw.len() + 1 != edges.len() {
            return Err(Error::Shape(format!(
                "{} masses need {} edges, got {}",
                raw.len(),
                raw.len() + 1,
                edges.len()
            )));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidParameter(
                "smoothing epsilon must be positive".into(),
            ));
        }
        if raw.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::InvalidInput("masses must be nonnegative".into()));
        }
        let total: f64 = raw.iter().sum::<f64>() + epsilon * raw.len() as f64;
        if total <= 0.0 {
            return Err(Error::InvalidInput("total mass is zero".into()));
        }
        let masses: Vec<f64> = raw.iter().map(|&m| (m + epsilon) / total).collect();
        Ok(Self {
            edges: edges.to_vec(),
            masses,
            epsilon,
        })
    }
}

/// `sum_x P(x) ln(P(x)/Q(x))` over histograms sharing the same bin edges.
///
/// Nonnegative, zero exactly when the smoothed masses coincide.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::Shape(
            "histograms must share identical bin edges".into(),
        ));
    }
    let kl: f64 = p
        .masses
        .iter()
        .zip(&q.masses)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    // Gibbs: analytically nonnegative; clamp stray rounding below zero
    Ok(kl.max(0.0))
}
