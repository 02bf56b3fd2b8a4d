//! Hidden-layer runtime monitor: isolation forest or LOF backends fitted
//! on the neuron activations of tapped hidden layers.
//!
//! Layers are evaluated output side first (right to left, where layers are
//! narrower), exiting early on the first layer that flags OOD. The verdict
//! is the disjunction of the per-layer verdicts, so traversal order only
//! changes the work done, never the answer. The composite score is the
//! maximum margin `score - layer threshold` over the evaluated layers,
//! thresholded at zero.

use serde::{Deserialize, Serialize};

use crate::detectors::calibrate::calibrate_threshold;
use crate::detectors::isolation_forest::IsolationForestModel;
use crate::detectors::lof::LofModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorBackendKind {
    IsolationForest,
    Lof,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum MonitorBackend {
    IsolationForest(IsolationForestModel),
    Lof(LofModel),
}

impl MonitorBackend {
    fn score(&self, activation: &[f64]) -> Result<f64> {
        match self {
            MonitorBackend::IsolationForest(m) => m.score(activation),
            MonitorBackend::Lof(m) => m.score(activation),
        }
    }
}

/// Parameters for fitting the per-layer backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerMonitorParams {
    pub backend: MonitorBackendKind,
    /// Isolation-forest tree count.
    pub n_trees: usize,
    /// Isolation-forest subsample size.
    pub subsample_size: usize,
    /// LOF neighbor count.
    pub k: usize,
    pub seed: u64,
}

impl Default for LayerMonitorParams {
    fn default() -> Self {
        Self {
            backend: MonitorBackendKind::IsolationForest,
            n_trees: 100,
            subsample_size: 256,
            k: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDetector {
    /// Hidden-layer index this detector taps (0 = first hidden layer).
    pub layer: usize,
    pub backend: MonitorBackend,
    pub threshold: f64,
}

/// Per-layer detectors over tapped hidden activations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerMonitor {
    /// Kept sorted by layer index; checks walk it in reverse.
    pub layers: Vec<LayerDetector>,
}

/// Outcome of a monitor check.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorCheck {
    /// Max margin (layer score minus layer threshold) over evaluated layers.
    pub score: f64,
    pub flagged: bool,
    /// Layer that triggered the early exit, if any.
    pub flagged_layer: Option<usize>,
    /// How many layer detectors ran before the verdict settled.
    pub layers_evaluated: usize,
}

impl LayerMonitor {
    /// Fit one backend per tapped hidden layer on ID activations, then
    /// calibrate each layer's threshold on held-out ID activations.
    pub fn fit(
        model: &MlpModel,
        tapped_layers: &[usize],
        params: &LayerMonitorParams,
        fit_inputs: &Matrix,
        calibration_inputs: &Matrix,
        retention: f64,
    ) -> Result<Self> {
        if tapped_layers.is_empty() {
            return Err(Error::Config("no layers tapped".into()));
        }
        let hidden = model.hidden_layers();
        for &l in tapped_layers {
            if l >= hidden {
                return Err(Error::Config(format!(
                    "layer {l} is not a hidden layer (model has {hidden})"
                )));
            }
        }
        let mut sorted = tapped_layers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let fit_traces = collect_activations(model, fit_inputs, &sorted)?;
        let calib_traces = collect_activations(model, calibration_inputs, &sorted)?;

        let mut layers = Vec::with_capacity(sorted.len());
        for (idx, &layer) in sorted.iter().enumerate() {
            let activations = &fit_traces[idx];
            let backend = match params.backend {
                MonitorBackendKind::IsolationForest => {
                    MonitorBackend::IsolationForest(IsolationForestModel::fit(
                        activations,
                        params.n_trees,
                        params.subsample_size,
                        params.seed.wrapping_add(layer as u64),
                    )?)
                }
                MonitorBackendKind::Lof => {
                    MonitorBackend::Lof(LofModel::fit(activations, params.k)?)
                }
            };
            let calib = &calib_traces[idx];
            let scores: Vec<f64> = (0..calib.rows())
                .map(|r| backend.score(calib.row(r)))
                .collect::<Result<_>>()?;
            let threshold = calibrate_threshold(&scores, retention)?;
            layers.push(LayerDetector {
                layer,
                backend,
                threshold,
            });
        }
        Ok(Self { layers })
    }

    /// Evaluate layers right to left with early exit on the first OOD flag.
    pub fn check(&self, model: &MlpModel, input: &[f64]) -> Result<MonitorCheck> {
        if self.layers.is_empty() {
            return Err(Error::Config("layer monitor has no fitted layers".into()));
        }
        let out = model.forward(input, true, false, 0)?;
        let trace = out.trace.expect("tap requested");
        let mut max_margin = f64::NEG_INFINITY;
        let mut evaluated = 0;
        for det in self.layers.iter().rev() {
            let activation = &trace.layers[det.layer].values;
            let margin = det.backend.score(activation)? - det.threshold;
            evaluated += 1;
            max_margin = max_margin.max(margin);
            if margin > 0.0 {
                return Ok(MonitorCheck {
                    score: max_margin,
                    flagged: true,
                    flagged_layer: Some(det.layer),
                    layers_evaluated: evaluated,
                });
            }
        }
        Ok(MonitorCheck {
            score: max_margin,
            flagged: false,
            flagged_layer: None,
            layers_evaluated: evaluated,
        })
    }
}

/// Forward every input with tapping and gather activations per requested
/// hidden layer, one matrix per layer.
fn collect_activations(model: &MlpModel, inputs: &Matrix, layers: &[usize]) -> Result<Vec<Matrix>> {
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(inputs.rows()); layers.len()];
    for r in 0..inputs.rows() {
        let out = model.forward(inputs.row(r), true, false, 0)?;
        let trace = out.trace.expect("tap requested");
        for (slot, &layer) in rows.iter_mut().zip(layers) {
            slot.push(trace.layers[layer].values.clone());
        }
    }
    rows.into_iter().map(|r| Matrix::from_rows(&r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, center: (f64, f64), seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                vec![
                    center.0 + rng.random_range(-1.0..1.0),
                    center.1 + rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn fitted_monitor(layers: &[usize]) -> (MlpModel, LayerMonitor) {
        let model = MlpModel::new(vec![2, 12, 8, 3], Activation::Tanh, false, 0.0, 1.0, 5).unwrap();
        let fit = cloud(120, (0.0, 0.0), 1);
        let calib = cloud(80, (0.0, 0.0), 2);
        let params = LayerMonitorParams {
            n_trees: 50,
            subsample_size: 64,
            ..Default::default()
        };
        let monitor = LayerMonitor::fit(&model, layers, &params, &fit, &calib, 0.95).unwrap();
        (model, monitor)
    }

    #[test]
    fn in_distribution_inputs_pass() {
        let (model, monitor) = fitted_monitor(&[0, 1]);
        let mut flagged = 0;
        let probe = cloud(50, (0.0, 0.0), 3);
        for r in 0..probe.rows() {
            let check = monitor.check(&model, probe.row(r)).unwrap();
            assert_eq!(check.flagged, check.score > 0.0);
            if check.flagged {
                flagged += 1;
            }
        }
        // roughly the per-layer retention; allow generous slack
        assert!(flagged < 15, "{flagged} of 50 flagged");
    }

    #[test]
    fn far_inputs_exit_early_on_the_output_side() {
        let (model, monitor) = fitted_monitor(&[0, 1]);
        let check = monitor.check(&model, &[90.0, -90.0]).unwrap();
        assert!(check.flagged);
        assert_eq!(check.layers_evaluated, 1, "expected an early exit");
        assert_eq!(check.flagged_layer, Some(1));
    }

    #[test]
    fn verdict_is_the_or_of_layer_verdicts() {
        let (model, monitor) = fitted_monitor(&[0, 1]);
        let probe = cloud(30, (6.0, 6.0), 4);
        for r in 0..probe.rows() {
            let full: Vec<bool> = monitor
                .layers
                .iter()
                .map(|det| {
                    let out = model.forward(probe.row(r), true, false, 0).unwrap();
                    let act = &out.trace.unwrap().layers[det.layer].values;
                    det.backend.score(act).unwrap() > det.threshold
                })
                .collect();
            let check = monitor.check(&model, probe.row(r)).unwrap();
            assert_eq!(check.flagged, full.iter().any(|&f| f));
        }
    }

    #[test]
    fn left_only_flag_still_takes_two_evaluations() {
        // hand-constructed fixture: the output-side layer never flags
        // (huge threshold), the input-side layer always does
        let (model, fitted) = fitted_monitor(&[0, 1]);
        let mut layers = fitted.layers;
        layers[0].threshold = -1e9; // layer 0 flags everything
        layers[1].threshold = 1e9; // layer 1 flags nothing
        let monitor = LayerMonitor { layers };
        let check = monitor.check(&model, &[0.1, -0.1]).unwrap();
        assert!(check.flagged);
        assert_eq!(check.flagged_layer, Some(0));
        assert_eq!(check.layers_evaluated, 2);
    }

    #[test]
    fn tapping_a_non_hidden_layer_is_an_error() {
        let model = MlpModel::new(vec![2, 12, 8, 3], Activation::Tanh, false, 0.0, 1.0, 5).unwrap();
        let fit = cloud(120, (0.0, 0.0), 1);
        let calib = cloud(80, (0.0, 0.0), 2);
        let err = LayerMonitor::fit(
            &model,
            &[2],
            &LayerMonitorParams::default(),
            &fit,
            &calib,
            0.95,
        );
        assert!(err.is_err());
    }
}
