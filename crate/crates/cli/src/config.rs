//! Run configuration: one JSON document, with command-line flags
//! overriding individual scalar fields (flag > file > default).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oodvote_core::dataset::LabeledDataset;
use oodvote_core::detectors::{
    DetectorFitConfig, DetectorKind, LayerMonitorParams, MonitorBackendKind, ShiftConfig,
};
use oodvote_core::error::{Error, Result};
use oodvote_core::harness::{gen_id, gen_ood, resample, with_proxy_reject};
use oodvote_core::model::{Activation, TrainingHyper};
use oodvote_core::seeding::derive_seed;
use oodvote_core::voter::VoterConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub data: DataSection,
    pub detectors: DetectorSection,
    pub voter: VoterSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            data: DataSection::default(),
            detectors: DetectorSection::default(),
            voter: VoterSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub has_reject_class: bool,
    pub dropout_rate: f64,
    pub temperature: f64,
    pub training: TrainingSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layer_sizes: vec![2, 16, 4],
            hidden_activation: Activation::Relu,
            has_reject_class: true,
            dropout_rate: 0.0,
            temperature: 1.0,
            training: TrainingSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
        }
    }
}

/// Exactly one source per data role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub train: DataSpec,
    pub calibrate: DataSpec,
    pub evaluate: DataSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: DataSpec::BlobsWithReject {
                classes: 3,
                per_class: 500,
                dim: 2,
                spread: 1.0,
                proxy_ood: 500,
            },
            calibrate: DataSpec::Resample { per_class: 100 },
            evaluate: DataSpec::IdPlusRing { ring_count: 500 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Gaussian ID blobs only.
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
    /// Gaussian ID blobs plus far-uniform proxy-OOD rows labeled as the
    /// reject class (the training set for a reject head).
    BlobsWithReject {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        proxy_ood: usize,
    },
    /// Fresh draws from the training generator's class means.
    Resample { per_class: usize },
    /// The training ID blobs with ring-OOD points appended.
    IdPlusRing { ring_count: usize },
    /// JSON-Lines dataset on disk.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    pub enabled: Vec<DetectorKind>,
    pub retention: f64,
    pub isolation_forest: IsolationForestSection,
    pub lof: LofSection,
    pub temperature_scale: f64,
    pub mahalanobis_layer: Option<usize>,
    pub layer_monitor: LayerMonitorSection,
    pub mc_dropout_passes: usize,
    pub uncertainty_voting: bool,
    pub ensemble: EnsembleSection,
    pub lo_glrt: LoGlrtSection,
    pub shift: ShiftSection,
}

impl Default for DetectorSection {
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
            isolation_forest: IsolationForestSection::default(),
            lof: LofSection::default(),
            temperature_scale: 2.0,
            mahalanobis_layer: None,
            layer_monitor: LayerMonitorSection::default(),
            mc_dropout_passes: 30,
            uncertainty_voting: false,
            ensemble: EnsembleSection::default(),
            lo_glrt: LoGlrtSection::default(),
            shift: ShiftSection::default(),
        }
    }
}

/// Ensemble detector: members are trained by cmd_fit with derived seeds
/// using the model section's architecture and hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub members: usize,
    /// Per-member weights; uniform when omitted.
    pub weights: Option<Vec<f64>>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            members: 3,
            weights: None,
        }
    }
}

/// LO-GLRT detector: template directions must be supplied explicitly
/// (the white-box setting, where the perturbation directions are known).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LoGlrtSection {
    pub templates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationForestSection {
    pub n_trees: usize,
    pub subsample_size: usize,
}

impl Default for IsolationForestSection {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LofSection {
    pub k: usize,
}

impl Default for LofSection {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerMonitorSection {
    pub layers: Vec<usize>,
    pub backend: MonitorBackendKind,
    pub n_trees: usize,
    pub subsample_size: usize,
    pub k: usize,
}

impl Default for LayerMonitorSection {
    fn default() -> Self {
        Self {
            layers: vec![0],
            backend: MonitorBackendKind::IsolationForest,
            n_trees: 100,
            subsample_size: 256,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSection {
    pub enabled: bool,
    pub bins: usize,
    pub window: usize,
    /// Explicit threshold; when absent it is calibrated from resampled
    /// same-distribution windows (requires generated training data).
    pub threshold: Option<f64>,
    pub calibration_windows: usize,
    pub percentile: f64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        Self {
            enabled: false,
            bins: 16,
            window: 200,
            threshold: None,
            calibration_windows: 100,
            percentile: 0.99,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VoterSection {
    /// Preset names ("1oo3", "2oo3") or "koon:k,n" entries, evaluated in
    /// order; the first is the monitored (primary) configuration.
    pub configs: Vec<String>,
    pub channels: Vec<String>,
    pub fail_safe_missing: bool,
}

impl Default for VoterSection {
    fn default() -> Self {
        Self {
            configs: vec!["1oo3".into(), "2oo3".into()],
            channels: vec![
                "isolation_forest".into(),
                "lof".into(),
                "reject_class".into(),
            ],
            fail_safe_missing: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidInput(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "model.layer_sizes needs input and output sizes".into(),
            ));
        }
        let enabled_ids: Vec<&str> = self.detectors.enabled.iter().map(|k| k.id()).collect();
        for channel in &self.voter.channels {
            if !enabled_ids.contains(&channel.as_str()) {
                return Err(Error::Config(format!(
                    "voter channel '{channel}' is not among the enabled detectors"
                )));
            }
            let kind = DetectorKind::from_id(channel)
                .ok_or_else(|| Error::Config(format!("unknown detector '{channel}'")))?;
            let eligible = kind
                .eligibility()
                .unwrap_or(self.detectors.uncertainty_voting);
            if !eligible {
                return Err(Error::Config(format!(
                    "voter channel '{channel}' is not voter-eligible"
                )));
            }
        }
        for name in &self.voter.configs {
            parse_voter_name(name, self.voter.channels.len())?;
        }
        if self.voter.configs.is_empty() {
            return Err(Error::Config("voter.configs must not be empty".into()));
        }
        Ok(())
    }

    /// Resolved voter configurations, primary first. An override name, when
    /// given, becomes the primary and is deduplicated against the rest.
    pub fn voter_configs(&self, override_name: Option<&str>) -> Result<Vec<VoterConfig>> {
        let mut names: Vec<String> = Vec::new();
        if let Some(name) = override_name {
            names.push(name.to_string());
        }
        for name in &self.voter.configs {
            if !names.contains(name) {
                names.push(name.clone());
            }
        }
        names
            .iter()
            .map(|name| {
                let (k, n) = parse_voter_name(name, self.voter.channels.len())?;
                let mut config = VoterConfig::koon(k, n, self.voter.channels.clone())?;
                config.name = name.clone();
                config.fail_safe_missing = self.voter.fail_safe_missing;
                Ok(config)
            })
            .collect()
    }

    pub fn training_hyper(&self) -> TrainingHyper {
        TrainingHyper {
            learning_rate: self.model.training.learning_rate,
            epochs: self.model.training.epochs,
            batch_size: self.model.training.batch_size,
            seed: derive_seed(self.seed, "train"),
        }
    }

    pub fn fit_config(&self) -> DetectorFitConfig {
        let d = &self.detectors;
        DetectorFitConfig {
            enabled: d.enabled.clone(),
            retention: d.retention,
            if_trees: d.isolation_forest.n_trees,
            if_subsample: d.isolation_forest.subsample_size,
            lof_k: d.lof.k,
            temperature: d.temperature_scale,
            mahalanobis_layer: d.mahalanobis_layer,
            monitor_layers: d.layer_monitor.layers.clone(),
            monitor: LayerMonitorParams {
                backend: d.layer_monitor.backend,
                n_trees: d.layer_monitor.n_trees,
                subsample_size: d.layer_monitor.subsample_size,
                k: d.layer_monitor.k,
                seed: 0,
            },
            mc_dropout_passes: d.mc_dropout_passes,
            uncertainty_voting: d.uncertainty_voting,
            ensemble: None,
            glrt_templates: (!d.lo_glrt.templates.is_empty()).then(|| d.lo_glrt.templates.clone()),
            shift: None,
            seed: derive_seed(self.seed, "fit"),
        }
    }

    /// Shift configuration for fitting, without its threshold resolved.
    pub fn shift_config(&self) -> ShiftConfig {
        ShiftConfig {
            bins: self.detectors.shift.bins,
            window: self.detectors.shift.window,
            ..ShiftConfig::default()
        }
    }

    /// Materialize a data role. Roles that derive from the training
    /// generator (`resample`, `id_plus_ring`) need the materialized
    /// training data.
    pub fn build_dataset(
        &self,
        role: DataRole,
        train: Option<&LabeledDataset>,
    ) -> Result<LabeledDataset> {
        let spec = match role {
            DataRole::Train => &self.data.train,
            DataRole::Calibrate => &self.data.calibrate,
            DataRole::Evaluate => &self.data.evaluate,
        };
        let role_seed = derive_seed(self.seed, role.stream());
        match spec {
            DataSpec::Blobs {
                classes,
                per_class,
                dim,
                spread,
            } => gen_id(*classes, *per_class, *dim, *spread, role_seed),
            DataSpec::BlobsWithReject {
                classes,
                per_class,
                dim,
                spread,
                proxy_ood,
            } => {
                let id = gen_id(*classes, *per_class, *dim, *spread, role_seed)?;
                with_proxy_reject(&id, *proxy_ood, *classes, derive_seed(role_seed, "proxy"))
            }
            DataSpec::Resample { per_class } => {
                let train = train.ok_or_else(|| {
                    Error::Config(format!("data role {role:?} derives from the training data"))
                })?;
                resample(train, *per_class, role_seed)
            }
            DataSpec::IdPlusRing { ring_count } => {
                let train = train.ok_or_else(|| {
                    Error::Config(format!("data role {role:?} derives from the training data"))
                })?;
                let id_only = only_id(train)?;
                let ring = gen_ood(
                    &id_only,
                    oodvote_core::dataset::OodKind::Ring,
                    *ring_count,
                    role_seed,
                )?;
                LabeledDataset::concat(&[&id_only, &ring])
            }
            DataSpec::File { path } => LabeledDataset::load_jsonl(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRole {
    Train,
    Calibrate,
    Evaluate,
}

impl DataRole {
    fn stream(self) -> &'static str {
        match self {
            DataRole::Train => "data-train",
            DataRole::Calibrate => "data-calibrate",
            DataRole::Evaluate => "data-evaluate",
        }
    }
}

/// The ID portion of a dataset, keeping the underlying blob provenance so
/// ring generation can see the original geometry.
fn only_id(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    use oodvote_core::dataset::Membership;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for ((row, &label), &membership) in dataset
        .samples
        .row_iter()
        .zip(&dataset.labels)
        .zip(&dataset.membership)
    {
        if membership == Membership::Id {
            rows.push(row.to_vec());
            labels.push(label);
        }
    }
    let n = rows.len();
    LabeledDataset::new(
        oodvote_core::linalg::Matrix::from_rows(&rows)?,
        labels,
        vec![Membership::Id; n],
        dataset.provenance.clone(),
    )
}

/// Parse "1oo3", "2oo3" or "koon:k,n" into (k, n).
pub fn parse_voter_name(name: &str, channel_count: usize) -> Result<(usize, usize)> {
    let (k, n) = match name {
        "1oo3" => (1, 3),
        "2oo3" => (2, 3),
        other => {
            let spec = other.strip_prefix("koon:").ok_or_else(|| {
                Error::Config(format!("voter '{other}' is not 1oo3, 2oo3 or koon:k,n"))
            })?;
            let mut parts = spec.splitn(2, ',');
            let k = parts
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Config(format!("bad koon spec '{other}'")))?;
            let n = parts
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Config(format!("bad koon spec '{other}'")))?;
            (k, n)
        }
    };
    if n != channel_count {
        return Err(Error::Config(format!(
            "voter '{name}' wants {n} channels but {channel_count} are configured"
        )));
    }
    Ok((k, n))
}
