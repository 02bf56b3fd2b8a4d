//! Command implementations. Every command is deterministic given the
//! configuration and the seed; outputs are byte-identical across runs.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oodvote_core::detectors::{DetectorBundle, ShiftCheck, SlidingShiftMonitor};
use oodvote_core::error::{Error, Result};
use oodvote_core::harness::{
    calibrate_shift_threshold, error_cascade, evaluate_with_stream, overconfidence, ActionFunction,
    EvalReport,
};
use oodvote_core::model::{train, MlpModel};
use oodvote_core::seeding::{derive_seed, sample_seed};
use oodvote_core::voter::{vote, VoteDecision};

use crate::config::{DataRole, RunConfig};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read model {}: {e}", path.display())))?;
    MlpModel::from_json(&text)
}

fn load_bundle(path: &Path) -> Result<DetectorBundle> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read bundle {}: {e}", path.display())))?;
    DetectorBundle::from_json(&text)
}

/// Train the classifier on the configured training data; writes
/// `model.json` and `loss_curve.csv` into the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<PathBuf> {
    let train_data = config.build_dataset(DataRole::Train, None)?;
    let model = MlpModel::new(
        config.model.layer_sizes.clone(),
        config.model.hidden_activation,
        config.model.has_reject_class,
        config.model.dropout_rate,
        config.model.temperature,
        derive_seed(config.seed, "model-init"),
    )?;
    let result = train(&model, &train_data, &config.training_hyper())?;

    let model_path = config.output_dir.join("model.json");
    write_file(&model_path, &(result.model.to_json()? + "\n"))?;

    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in result.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    write_file(&config.output_dir.join("loss_curve.csv"), &csv)?;

    println!(
        "trained on {} samples for {} epochs; final loss {}",
        train_data.len(),
        result.loss_curve.len(),
        result.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model_path)
}

/// Fit and calibrate the enabled detectors; writes `bundle.json`.
pub fn cmd_fit(config: &RunConfig, model_path: &Path) -> Result<PathBuf> {
    let model = load_model(model_path)?;
    let train_data = config.build_dataset(DataRole::Train, None)?;
    let calibration = config.build_dataset(DataRole::Calibrate, Some(&train_data))?;

    let mut fit_config = config.fit_config();
    if config
        .detectors
        .enabled
        .contains(&oodvote_core::detectors::DetectorKind::Ensemble)
    {
        fit_config.ensemble = Some(train_ensemble(config, &train_data)?);
    }
    if config.detectors.shift.enabled {
        let mut shift_config = config.shift_config();
        shift_config.threshold = match config.detectors.shift.threshold {
            Some(t) => t,
            None => {
                let classes = train_data.id_class_count().max(1);
                let per_class = config.detectors.shift.window.div_ceil(classes);
                calibrate_shift_threshold(
                    &train_data,
                    &shift_config,
                    per_class,
                    config.detectors.shift.calibration_windows,
                    config.detectors.shift.percentile,
                    derive_seed(config.seed, "shift-threshold"),
                )?
            }
        };
        fit_config.shift = Some(shift_config);
    }

    let bundle = DetectorBundle::fit(&model, &train_data, &calibration, &fit_config)?;
    let bundle_path = config.output_dir.join("bundle.json");
    write_file(&bundle_path, &(bundle.to_json()? + "\n"))?;
    println!(
        "fitted {} detectors at {} ID retention",
        bundle.detectors.len(),
        bundle.retention
    );
    Ok(bundle_path)
}

/// Evaluate detectors and voters on the configured evaluation data;
/// writes the canonical `report.json`, the flat `report.csv`, the
/// per-sample `verdicts.jsonl` stream, and the informational
/// `latency.json` sidecar.
pub fn cmd_eval(
    config: &RunConfig,
    model_path: &Path,
    bundle_path: &Path,
    voter_override: Option<&str>,
) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let bundle = load_bundle(bundle_path)?;
    let train_data = config.build_dataset(DataRole::Train, None)?;
    let eval_data = config.build_dataset(DataRole::Evaluate, Some(&train_data))?;
    let voters = config.voter_configs(voter_override)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let verdict_path = config.output_dir.join("verdicts.jsonl");
    let mut verdict_file = std::io::BufWriter::new(std::fs::File::create(&verdict_path)?);
    let report = evaluate_with_stream(
        &model,
        &bundle,
        &voters,
        &eval_data,
        derive_seed(config.seed, "evaluate"),
        Some(&mut verdict_file),
    )?;
    verdict_file.flush()?;

    write_file(
        &config.output_dir.join("report.json"),
        &(report.to_canonical_json()? + "\n"),
    )?;
    write_file(&config.output_dir.join("report.csv"), &report.to_csv())?;
    if let Some(latency) = &report.latency {
        write_file(
            &config.output_dir.join("latency.json"),
            &(serde_json::to_string_pretty(latency)? + "\n"),
        )?;
        println!(
            "monitor path latency: median {:.1} us, p99 {:.1} us over {} samples",
            latency.median_us, latency.p99_us, latency.samples
        );
    }
    for v in &report.voters {
        println!(
            "{}: recall {:.3}, fpr {:.3} (fn {}, fp {})",
            v.name,
            v.ood_recall,
            v.id_fpr,
            v.confusion.false_negatives,
            v.confusion.false_positives
        );
    }
    Ok(report)
}

/// Train the ensemble members with seeds derived per member, reusing the
/// model section's architecture and training hyperparameters.
fn train_ensemble(
    config: &RunConfig,
    train_data: &oodvote_core::dataset::LabeledDataset,
) -> Result<oodvote_core::model::EnsembleSpec> {
    let section = &config.detectors.ensemble;
    if section.members == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let mut members = Vec::with_capacity(section.members);
    for m in 0..section.members {
        let init = MlpModel::new(
            config.model.layer_sizes.clone(),
            config.model.hidden_activation,
            config.model.has_reject_class,
            config.model.dropout_rate,
            config.model.temperature,
            derive_seed(config.seed, &format!("ensemble-init-{m}")),
        )?;
        let hyper = oodvote_core::model::TrainingHyper {
            seed: derive_seed(config.seed, &format!("ensemble-train-{m}")),
            ..config.training_hyper()
        };
        members.push(train(&init, train_data, &hyper)?.model);
    }
    let weights = section
        .weights
        .clone()
        .unwrap_or_else(|| vec![1.0; section.members]);
    oodvote_core::model::EnsembleSpec::new(members, weights)
}

/// One input line of the monitoring stream.
#[derive(Debug, Deserialize)]
struct MonitorLine {
    #[serde(default)]
    id: Option<u64>,
    x: Vec<f64>,
}

/// One output line of the monitoring stream.
#[derive(Debug, Serialize)]
struct MonitorOutput {
    id: u64,
    vote: VoteDecision,
    #[serde(skip_serializing_if = "Option::is_none")]
    shift: Option<ShiftCheck>,
}

/// Stream samples from `input` through the primary voter, one JSONL
/// decision per valid line. Malformed lines are reported on `diag`,
/// skipped, and make the final exit nonzero. Memory use is bounded: the
/// stream is never buffered beyond one line (plus the shift detector's
/// fixed window).
pub fn cmd_monitor<R: BufRead, W: Write, D: Write>(
    config: &RunConfig,
    model_path: &Path,
    bundle_path: &Path,
    voter_override: Option<&str>,
    input: R,
    mut output: W,
    mut diag: D,
) -> Result<bool> {
    let model = load_model(model_path)?;
    let bundle = load_bundle(bundle_path)?;
    let primary = config
        .voter_configs(voter_override)?
        .into_iter()
        .next()
        .expect("validated non-empty");
    for channel in &primary.channels {
        if bundle.get(channel).is_none() {
            return Err(Error::Config(format!(
                "voter channel '{channel}' is not in the bundle"
            )));
        }
    }
    let mut shift_monitor = bundle.shift.clone().map(SlidingShiftMonitor::new);
    let monitor_seed = derive_seed(config.seed, "monitor");

    let mut valid: u64 = 0;
    let mut malformed = false;
    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MonitorLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                writeln!(diag, "line {}: malformed sample: {e}", line_no + 1)?;
                malformed = true;
                continue;
            }
        };
        if parsed.x.len() != model.input_dim() {
            writeln!(
                diag,
                "line {}: sample has dimension {}, model expects {}",
                line_no + 1,
                parsed.x.len(),
                model.input_dim()
            )?;
            malformed = true;
            continue;
        }
        let sseed = sample_seed(monitor_seed, valid);
        let verdicts = primary
            .channels
            .iter()
            .map(|ch| {
                bundle
                    .get(ch)
                    .expect("checked above")
                    .verdict(&model, &parsed.x, sseed)
            })
            .collect::<Result<Vec<_>>>()?;
        let decision = vote(&primary, &verdicts)?;
        let shift = match shift_monitor.as_mut() {
            Some(m) => m.push(&parsed.x)?,
            None => None,
        };
        let out_line = MonitorOutput {
            id: parsed.id.unwrap_or(valid),
            vote: decision,
            shift,
        };
        serde_json::to_writer(&mut output, &out_line)?;
        output.write_all(b"\n")?;
        valid += 1;
    }
    output.flush()?;
    Ok(!malformed)
}

/// Propagate state errors through an action function; returns the
/// analysis as pretty JSON.
pub fn cmd_cascade(
    function_spec: &str,
    state: &[f64],
    errors: &[f64],
    fd_step: f64,
) -> Result<String> {
    let text = match function_spec.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read function spec {path}: {e}")))?,
        None => function_spec.to_string(),
    };
    let function: ActionFunction = serde_json::from_str(&text)?;
    let analysis = error_cascade(&function, state, errors, fd_step)?;
    Ok(serde_json::to_string_pretty(&analysis)?)
}

/// Overconfidence characterization from counts and accuracies.
pub fn cmd_overconfidence(
    positives: usize,
    negatives: usize,
    true_positives: usize,
    false_positives: usize,
    model_acc: f64,
    true_acc: f64,
) -> Result<String> {
    let report = overconfidence(
        positives,
        negatives,
        true_positives,
        false_positives,
        model_acc,
        true_acc,
    )?;
    Ok(serde_json::to_string_pretty(&report)?)
}

/// Parse a comma-separated float list.
pub fn parse_float_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("bad number '{part}': {e}")))
        })
        .collect()
}
