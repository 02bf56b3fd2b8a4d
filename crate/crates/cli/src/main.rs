//! `oodvote`: train a small classifier, wrap it in redundant error
//! detectors, vote on their verdicts, and measure the FP/FN trade-offs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oodvote_core::error::Result;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "oodvote",
    version,
    about = "Runtime OOD monitoring with k-out-of-n voting over redundant detectors"
)]
struct Cli {
    /// Run configuration JSON (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configuration's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Voter selection: 1oo3, 2oo3 or koon:k,n (becomes the primary).
    #[arg(long, global = true)]
    voter: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier; writes model.json and loss_curve.csv.
    Train,
    /// Fit and calibrate the enabled detectors; writes bundle.json.
    Fit {
        /// Trained model file (default: `<out>/model.json`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate detectors and voters; writes report.json, report.csv and
    /// the informational latency.json.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Detector bundle file (default: `<out>/bundle.json`).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Stream JSONL samples from stdin through the primary voter to stdout.
    Monitor {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Propagate state errors through an action function.
    Cascade {
        /// Function spec as inline JSON, or @path to a JSON file.
        #[arg(long)]
        function: String,
        /// Comma-separated state vector.
        #[arg(long)]
        state: String,
        /// Comma-separated per-state errors.
        #[arg(long)]
        errors: String,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
    },
    /// Overconfidence characterization from counts and accuracies.
    Overconfidence {
        #[arg(long)]
        positives: usize,
        #[arg(long)]
        negatives: usize,
        #[arg(long)]
        true_positives: usize,
        #[arg(long)]
        false_positives: usize,
        #[arg(long)]
        model_acc: f64,
        #[arg(long)]
        true_acc: f64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<bool> {
    let config = load_config(cli)?;
    let model_default = config.output_dir.join("model.json");
    let bundle_default = config.output_dir.join("bundle.json");
    match &cli.command {
        Command::Train => {
            commands::cmd_train(&config)?;
        }
        Command::Fit { model } => {
            commands::cmd_fit(&config, model.as_ref().unwrap_or(&model_default))?;
        }
        Command::Eval { model, bundle } => {
            commands::cmd_eval(
                &config,
                model.as_ref().unwrap_or(&model_default),
                bundle.as_ref().unwrap_or(&bundle_default),
                cli.voter.as_deref(),
            )?;
        }
        Command::Monitor { model, bundle } => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let stderr = std::io::stderr();
            let clean = commands::cmd_monitor(
                &config,
                model.as_ref().unwrap_or(&model_default),
                bundle.as_ref().unwrap_or(&bundle_default),
                cli.voter.as_deref(),
                stdin.lock(),
                stdout.lock(),
                stderr.lock(),
            )?;
            return Ok(clean);
        }
        Command::Cascade {
            function,
            state,
            errors,
            fd_step,
        } => {
            let state = commands::parse_float_list(state)?;
            let errors = commands::parse_float_list(errors)?;
            println!(
                "{}",
                commands::cmd_cascade(function, &state, &errors, *fd_step)?
            );
        }
        Command::Overconfidence {
            positives,
            negatives,
            true_positives,
            false_positives,
            model_acc,
            true_acc,
        } => {
            println!(
                "{}",
                commands::cmd_overconfidence(
                    *positives,
                    *negatives,
                    *true_positives,
                    *false_positives,
                    *model_acc,
                    *true_acc,
                )?
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
