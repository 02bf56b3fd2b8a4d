//! Fit-then-score error detectors, each producing a [`DetectorVerdict`].
//!
//! A verdict's binary decision is always derived from its raw score and
//! the detector's calibrated threshold (`score > threshold` means OOD);
//! no detector overrides that rule. Voter eligibility follows the
//! detector kind: reject class, isolation forest, LOF and the
//! hidden-layer monitor are eligible; max-softmax, temperature scaling
//! and Mahalanobis are baselines only; MC dropout and ensembles become
//! eligible only when thresholded post-processing is explicitly switched
//! on; the shift and LO-GLRT detectors are report-only.
//!
//! Fitted detectors are immutable and safe to score concurrently. The
//! shift detector's sliding window is the single stateful exception and
//! lives behind `&mut self`.

pub mod calibrate;
pub mod categorize;
pub mod histogram;
pub mod isolation_forest;
pub mod layer_monitor;
pub mod lo_glrt;
pub mod lof;
pub mod mahalanobis;
pub mod shift;

pub use calibrate::{calibrate_threshold, MIN_CALIBRATION_SCORES};
pub use categorize::{categorize_batch, Category, DEFAULT_P_ID_THRESHOLD};
pub use histogram::{kl_divergence, Histogram, DEFAULT_SMOOTHING};
pub use isolation_forest::{anomaly_score_from_path, c_factor, IsolationForestModel};
pub use layer_monitor::{
    LayerMonitor, LayerMonitorParams, MonitorBackend, MonitorBackendKind, MonitorCheck,
};
pub use lo_glrt::LoGlrtModel;
pub use lof::LofModel;
pub use mahalanobis::MahalanobisModel;
pub use shift::{ShiftCheck, ShiftConfig, ShiftDetector, SlidingShiftMonitor, MIN_WINDOW};

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Membership};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{
    ensemble_predict, mc_dropout_predict, softmax_temperature, EnsembleSpec, MlpModel,
};
use crate::seeding::derive_seed;

/// Binary detector decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

/// One detector's output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub detector_id: String,
    pub score: f64,
    pub decision: Decision,
    pub voter_eligible: bool,
}

/// One line of a verdict stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sample_id: u64,
    pub detector_id: String,
    pub score: f64,
    pub decision: Decision,
    pub eligible: bool,
}

/// The detector zoo. Kind names double as detector ids and as config keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    IsolationForest,
    Lof,
    RejectClass,
    Softmax,
    Temperature,
    Mahalanobis,
    LayerMonitor,
    McDropout,
    Ensemble,
    LoGlrt,
}

impl DetectorKind {
    pub fn id(self) -> &'static str {
        match self {
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::Lof => "lof",
            DetectorKind::RejectClass => "reject_class",
            DetectorKind::Softmax => "softmax",
            DetectorKind::Temperature => "temperature",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::LayerMonitor => "layer_monitor",
            DetectorKind::McDropout => "mc_dropout",
            DetectorKind::Ensemble => "ensemble",
            DetectorKind::LoGlrt => "lo_glrt",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [
            DetectorKind::IsolationForest,
            DetectorKind::Lof,
            DetectorKind::RejectClass,
            DetectorKind::Softmax,
            DetectorKind::Temperature,
            DetectorKind::Mahalanobis,
            DetectorKind::LayerMonitor,
            DetectorKind::McDropout,
            DetectorKind::Ensemble,
            DetectorKind::LoGlrt,
        ]
        .into_iter()
        .find(|k| k.id() == id)
    }

    /// Whether verdicts of this kind may feed the voter. `None` means
    /// "only with explicit thresholded post-processing" (off by default).
    pub fn eligibility(self) -> Option<bool> {
        match self {
            DetectorKind::RejectClass
            | DetectorKind::IsolationForest
            | DetectorKind::Lof
            | DetectorKind::LayerMonitor => Some(true),
            DetectorKind::Softmax
            | DetectorKind::Temperature
            | DetectorKind::Mahalanobis
            | DetectorKind::LoGlrt => Some(false),
            DetectorKind::McDropout | DetectorKind::Ensemble => None,
        }
    }
}

/// Per-sample LO-GLRT scoring against class-centered input residuals.
///
/// The statistic runs on `input - mean(predicted class)`, which keeps the
/// surrogate Gaussian tight around the within-class spread instead of the
/// between-class spread of the full mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoGlrtDetector {
    pub class_means: Vec<Vector>,
    pub glrt: LoGlrtModel,
}

impl LoGlrtDetector {
    pub fn residual(&self, model: &MlpModel, input: &[f64]) -> Result<Vector> {
        let class = model.predicted_class(input)?;
        let mean = self
            .class_means
            .get(class)
            .ok_or_else(|| Error::Config(format!("no class mean recorded for class {class}")))?;
        Ok(input.iter().zip(mean).map(|(x, m)| x - m).collect())
    }

    pub fn score(&self, model: &MlpModel, input: &[f64]) -> Result<f64> {
        let r = self.residual(model, input)?;
        self.glrt.statistic(&[r])
    }
}

/// A fitted detector (serialized into the bundle with a `type` tag).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FittedDetector {
    IsolationForest { model: IsolationForestModel },
    Lof { model: LofModel },
    RejectClass,
    Softmax,
    Temperature { temperature: f64 },
    Mahalanobis { model: MahalanobisModel },
    LayerMonitor { monitor: LayerMonitor },
    McDropout { passes: usize },
    Ensemble { spec: EnsembleSpec },
    LoGlrt { detector: LoGlrtDetector },
}

impl FittedDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            FittedDetector::IsolationForest { .. } => DetectorKind::IsolationForest,
            FittedDetector::Lof { .. } => DetectorKind::Lof,
            FittedDetector::RejectClass => DetectorKind::RejectClass,
            FittedDetector::Softmax => DetectorKind::Softmax,
            FittedDetector::Temperature { .. } => DetectorKind::Temperature,
            FittedDetector::Mahalanobis { .. } => DetectorKind::Mahalanobis,
            FittedDetector::LayerMonitor { .. } => DetectorKind::LayerMonitor,
            FittedDetector::McDropout { .. } => DetectorKind::McDropout,
            FittedDetector::Ensemble { .. } => DetectorKind::Ensemble,
            FittedDetector::LoGlrt { .. } => DetectorKind::LoGlrt,
        }
    }

    pub fn id(&self) -> &'static str {
        self.kind().id()
    }

    /// Raw anomaly score for one sample; larger means more OOD.
    ///
    /// `sample_seed` feeds the stochastic detectors (MC dropout) so that
    /// scoring stays deterministic and order-independent.
    pub fn score(&self, model: &MlpModel, input: &[f64], sample_seed: u64) -> Result<f64> {
        match self {
            FittedDetector::IsolationForest { model: forest } => forest.score(input),
            FittedDetector::Lof { model: lof } => lof.score(input),
            FittedDetector::RejectClass => model.reject_probability(input),
            FittedDetector::Softmax => {
                let probs = model.probabilities(input)?;
                Ok(1.0 - probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }
            FittedDetector::Temperature { temperature } => {
                let probs = softmax_temperature(&model.logits(input)?, *temperature)?;
                Ok(1.0 - probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }
            FittedDetector::Mahalanobis { model: maha } => match maha.feature_layer {
                None => maha.score(input),
                Some(layer) => {
                    let out = model.forward(input, true, false, 0)?;
                    let trace = out.trace.expect("tap requested");
                    let act = trace.layers.get(layer).ok_or_else(|| {
                        Error::Config(format!("model has no hidden layer {layer}"))
                    })?;
                    maha.score(&act.values)
                }
            },
            FittedDetector::LayerMonitor { monitor } => Ok(monitor.check(model, input)?.score),
            FittedDetector::McDropout { passes } => {
                Ok(mc_dropout_predict(model, input, *passes, sample_seed)?.max_std())
            }
            FittedDetector::Ensemble { spec } => Ok(ensemble_predict(spec, input)?.disagreement),
            FittedDetector::LoGlrt { detector } => detector.score(model, input),
        }
    }
}

/// A fitted detector plus its calibrated decision threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedDetector {
    #[serde(flatten)]
    pub detector: FittedDetector,
    pub threshold: f64,
    pub voter_eligible: bool,
}

impl CalibratedDetector {
    /// Score the sample and apply the threshold rule.
    pub fn verdict(
        &self,
        model: &MlpModel,
        input: &[f64],
        sample_seed: u64,
    ) -> Result<DetectorVerdict> {
        let score = self.detector.score(model, input, sample_seed)?;
        Ok(DetectorVerdict {
            detector_id: self.detector.id().to_string(),
            score,
            decision: if score > self.threshold {
                Decision::Ood
            } else {
                Decision::Id
            },
            voter_eligible: self.voter_eligible,
        })
    }
}

pub const BUNDLE_VERSION: u32 = 1;

/// Everything cmd_fit produces: calibrated per-sample detectors plus the
/// optional window-based shift detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorBundle {
    pub version: u32,
    /// ID retention the thresholds were calibrated at.
    pub retention: f64,
    pub detectors: Vec<CalibratedDetector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftDetector>,
}

/// Fitting parameters for the bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorFitConfig {
    pub enabled: Vec<DetectorKind>,
    pub retention: f64,
    pub if_trees: usize,
    pub if_subsample: usize,
    pub lof_k: usize,
    pub temperature: f64,
    pub mahalanobis_layer: Option<usize>,
    pub monitor_layers: Vec<usize>,
    pub monitor: LayerMonitorParams,
    pub mc_dropout_passes: usize,
    /// Opt-in voter eligibility for the thresholded uncertainty detectors
    /// (MC dropout, ensemble).
    pub uncertainty_voting: bool,
    /// Member models for the ensemble detector, trained by the caller.
    #[serde(skip)]
    pub ensemble: Option<EnsembleSpec>,
    /// Known perturbation directions for the LO-GLRT templates.
    #[serde(skip)]
    pub glrt_templates: Option<Vec<Vector>>,
    /// Shift detector configuration with a pre-calibrated threshold.
    pub shift: Option<ShiftConfig>,
    pub seed: u64,
}

impl Default for DetectorFitConfig {
    fn default() -> Self {
        Self {
            enabled: vec![
                DetectorKind::IsolationForest,
                DetectorKind::Lof,
                DetectorKind::RejectClass,
                DetectorKind::Softmax,
                DetectorKind::Temperature,
                DetectorKind::Mahalanobis,
            ],
            retention: 0.95,
            if_trees: 100,
            if_subsample: 256,
            lof_k: 10,
            temperature: 2.0,
            mahalanobis_layer: None,
            monitor_layers: vec![0],
            monitor: LayerMonitorParams::default(),
            mc_dropout_passes: 30,
            uncertainty_voting: false,
            ensemble: None,
            glrt_templates: None,
            shift: None,
            seed: 0,
        }
    }
}

impl DetectorBundle {
    /// Fit every enabled detector on the training ID data and calibrate
    /// its threshold on the held-out calibration ID scores.
    pub fn fit(
        model: &MlpModel,
        train: &LabeledDataset,
        calibration: &LabeledDataset,
        config: &DetectorFitConfig,
    ) -> Result<Self> {
        let id_rows = train.rows_with_membership(Membership::Id);
        let calib_rows = calibration.rows_with_membership(Membership::Id);
        if id_rows.rows() == 0 {
            return Err(Error::Fit("training data has no ID samples".into()));
        }
        if calib_rows.rows() < MIN_CALIBRATION_SCORES {
            return Err(Error::Fit(format!(
                "calibration data has {} ID samples; need at least {MIN_CALIBRATION_SCORES}",
                calib_rows.rows()
            )));
        }

        for (i, kind) in config.enabled.iter().enumerate() {
            if config.enabled[..i].contains(kind) {
                return Err(Error::Config(format!(
                    "detector '{}' enabled twice",
                    kind.id()
                )));
            }
        }

        let mut detectors = Vec::with_capacity(config.enabled.len());
        for &kind in &config.enabled {
            let fitted = match kind {
                DetectorKind::IsolationForest => FittedDetector::IsolationForest {
                    model: IsolationForestModel::fit(
                        &id_rows,
                        config.if_trees,
                        config.if_subsample,
                        derive_seed(config.seed, "fit-isolation-forest"),
                    )?,
                },
                DetectorKind::Lof => FittedDetector::Lof {
                    model: LofModel::fit(&id_rows, config.lof_k)?,
                },
                DetectorKind::RejectClass => {
                    if !model.has_reject_class {
                        return Err(Error::Config(
                            "reject_class detector needs a model with a reject head".into(),
                        ));
                    }
                    FittedDetector::RejectClass
                }
                DetectorKind::Softmax => FittedDetector::Softmax,
                DetectorKind::Temperature => FittedDetector::Temperature {
                    temperature: config.temperature,
                },
                DetectorKind::Mahalanobis => FittedDetector::Mahalanobis {
                    model: fit_mahalanobis(model, train, config.mahalanobis_layer)?,
                },
                DetectorKind::LayerMonitor => FittedDetector::LayerMonitor {
                    monitor: LayerMonitor::fit(
                        model,
                        &config.monitor_layers,
                        &LayerMonitorParams {
                            seed: derive_seed(config.seed, "fit-layer-monitor"),
                            ..config.monitor.clone()
                        },
                        &id_rows,
                        &calib_rows,
                        config.retention,
                    )?,
                },
                DetectorKind::McDropout => {
                    if config.mc_dropout_passes == 0 {
                        return Err(Error::InvalidParameter(
                            "mc_dropout needs at least one pass".into(),
                        ));
                    }
                    FittedDetector::McDropout {
                        passes: config.mc_dropout_passes,
                    }
                }
                DetectorKind::Ensemble => FittedDetector::Ensemble {
                    spec: config.ensemble.clone().ok_or_else(|| {
                        Error::Config("ensemble detector enabled without member models".into())
                    })?,
                },
                DetectorKind::LoGlrt => FittedDetector::LoGlrt {
                    detector: fit_lo_glrt(model, train, config)?,
                },
            };

            // The layer monitor carries per-layer calibrated thresholds and
            // reports a margin; its outer threshold is fixed at zero.
            let threshold = if kind == DetectorKind::LayerMonitor {
                0.0
            } else {
                let scores: Vec<f64> = (0..calib_rows.rows())
                    .map(|r| {
                        fitted.score(
                            model,
                            calib_rows.row(r),
                            derive_seed(config.seed, &format!("calibrate-{r}")),
                        )
                    })
                    .collect::<Result<_>>()?;
                calibrate_threshold(&scores, config.retention)?
            };
            let voter_eligible = fitted
                .kind()
                .eligibility()
                .unwrap_or(config.uncertainty_voting);
            detectors.push(CalibratedDetector {
                detector: fitted,
                threshold,
                voter_eligible,
            });
        }

        let shift = match &config.shift {
            Some(shift_config) => Some(ShiftDetector::fit(&id_rows, shift_config.clone())?),
            None => None,
        };

        Ok(Self {
            version: BUNDLE_VERSION,
            retention: config.retention,
            detectors,
            shift,
        })
    }

    pub fn get(&self, detector_id: &str) -> Option<&CalibratedDetector> {
        self.detectors
            .iter()
            .find(|d| d.detector.id() == detector_id)
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.detectors.iter().map(|d| d.detector.id()).collect()
    }

    /// Verdicts of every per-sample detector on one input.
    pub fn verdicts(
        &self,
        model: &MlpModel,
        input: &[f64],
        sample_seed: u64,
    ) -> Result<Vec<DetectorVerdict>> {
        self.detectors
            .iter()
            .map(|d| d.verdict(model, input, sample_seed))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let bundle: DetectorBundle = serde_json::from_str(json)?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "bundle version {} is not supported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        Ok(bundle)
    }
}

/// Group training ID rows by class; features are raw inputs or tapped
/// hidden activations.
fn fit_mahalanobis(
    model: &MlpModel,
    train: &LabeledDataset,
    feature_layer: Option<usize>,
) -> Result<MahalanobisModel> {
    let classes = train
        .labels
        .iter()
        .zip(&train.membership)
        .filter(|(_, &m)| m == Membership::Id)
        .map(|(&l, _)| l + 1)
        .max()
        .ok_or_else(|| Error::Fit("no ID samples".into()))?;
    let mut per_class: Vec<Vec<Vector>> = vec![Vec::new(); classes];
    for ((row, &label), &membership) in train
        .samples
        .row_iter()
        .zip(&train.labels)
        .zip(&train.membership)
    {
        if membership != Membership::Id {
            continue;
        }
        let feature = match feature_layer {
            None => row.to_vec(),
            Some(layer) => {
                let out = model.forward(row, true, false, 0)?;
                let trace = out.trace.expect("tap requested");
                trace
                    .layers
                    .get(layer)
                    .ok_or_else(|| Error::Config(format!("model has no hidden layer {layer}")))?
                    .values
                    .clone()
            }
        };
        per_class[label].push(feature);
    }
    let matrices: Vec<Matrix> = per_class
        .iter()
        .map(|rows| Matrix::from_rows(rows))
        .collect::<Result<_>>()?;
    MahalanobisModel::fit(&matrices, feature_layer)
}

/// Class-centered residual model with templates from the known
/// perturbation directions.
fn fit_lo_glrt(
    model: &MlpModel,
    train: &LabeledDataset,
    config: &DetectorFitConfig,
) -> Result<LoGlrtDetector> {
    let directions = config.glrt_templates.as_ref().ok_or_else(|| {
        Error::Config("lo_glrt detector enabled without template directions".into())
    })?;
    if directions.is_empty() {
        return Err(Error::Config("lo_glrt template set is empty".into()));
    }
    let class_means = class_input_means(train)?;
    let mut residuals: Vec<Vector> = Vec::new();
    for ((row, &label), &membership) in train
        .samples
        .row_iter()
        .zip(&train.labels)
        .zip(&train.membership)
    {
        if membership != Membership::Id {
            continue;
        }
        let mean = &class_means[label];
        residuals.push(row.iter().zip(mean).map(|(x, m)| x - m).collect());
    }
    let reference = Matrix::from_rows(&residuals)?;
    let templates: Vec<Vec<Vector>> = directions.iter().map(|d| vec![d.clone()]).collect();
    let glrt = LoGlrtModel::fit(&reference, 1, templates)?;
    let _ = model;
    Ok(LoGlrtDetector { class_means, glrt })
}

/// Mean input vector of each class among the ID samples.
pub fn class_input_means(dataset: &LabeledDataset) -> Result<Vec<Vector>> {
    let classes = dataset
        .labels
        .iter()
        .zip(&dataset.membership)
        .filter(|(_, &m)| m == Membership::Id)
        .map(|(&l, _)| l + 1)
        .max()
        .ok_or_else(|| Error::Fit("no ID samples".into()))?;
    let dim = dataset.dim();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for ((row, &label), &membership) in dataset
        .samples
        .row_iter()
        .zip(&dataset.labels)
        .zip(&dataset.membership)
    {
        if membership != Membership::Id {
            continue;
        }
        for (s, x) in sums[label].iter_mut().zip(row) {
            *s += x;
        }
        counts[label] += 1;
    }
    for (c, (sum, &count)) in sums.iter_mut().zip(&counts).enumerate() {
        if count == 0 {
            return Err(Error::Fit(format!("class {c} has no ID samples")));
        }
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
    }
    Ok(sums)
}
