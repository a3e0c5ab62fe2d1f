//! `effisegnet` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration, 3 data,
//! 4 resources (memory), 5 numerical failure (NaN loss).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use effisegnet::backbone::{Variant, WEIGHTS_DIR_ENV};
use effisegnet::data::SplitSpec;
use effisegnet::fusion::FusionHeadConfig;
use effisegnet::orchestrator::{
    cmd_evaluate, cmd_params, cmd_predict, cmd_synth, cmd_train, format_params_table, ExperimentConfig, Overrides,
    Subset,
};
use effisegnet::train::BatchSize;
use effisegnet::Error;

#[derive(Parser, Debug)]
#[command(name = "effisegnet", version, about = "EfficientNet segmentation with a full-scale additive decoder")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant b0…b7.
    #[arg(long)]
    variant: Option<Variant>,
    /// Initialize the encoder from ImageNet weights (looked up in $EFFISEGNET_WEIGHTS_DIR).
    #[arg(long, overrides_with = "no_pretrained")]
    pretrained: bool,
    /// Train the encoder from scratch.
    #[arg(long)]
    no_pretrained: bool,
    /// Dataset root containing images/ and masks/.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Split file (JSON with train/validation/test) or generate:<seed>.
    #[arg(long)]
    split: Option<SplitSpec>,
    /// Run seed (initialization, shuffling, augmentation).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size or `auto` (largest that fits in memory).
    #[arg(long)]
    batch_size: Option<BatchSize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let pretrained = match (self.pretrained, self.no_pretrained) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        cfg.apply(&Overrides {
            variant: self.variant,
            pretrained,
            data_root: self.data_root.clone(),
            split: self.split.clone(),
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a run directory.
    Train {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split and write metrics.json / metrics.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// train, validation or test.
        #[arg(long, default_value = "test")]
        subset: Subset,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict binary masks at the original image resolution.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Refuse checkpoints trained as a different variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Also write probability maps as .npy.
        #[arg(long)]
        probs: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        images: Vec<PathBuf>,
    },
    /// Print the pretrained / randomly initialized parameter split.
    Params {
        /// A variant (b0…b7) or `all`.
        #[arg(default_value = "all")]
        which: String,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic polyp-like dataset (images/ + masks/).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { experiment, out } => {
            let cfg = experiment.resolve()?;
            if cfg.model.pretrained && cfg.model.weights.is_none() && std::env::var_os(WEIGHTS_DIR_ENV).is_none() {
                log::warn!("--pretrained without model.weights: set {WEIGHTS_DIR_ENV} to the pretrained weight directory");
            }
            let dir = cmd_train(&cfg, &out)?;
            println!("run directory: {}", dir.display());
        }
        Command::Evaluate { checkpoint, experiment, subset, threshold, out } => {
            let variant = experiment.variant;
            let mut cfg = experiment.resolve()?;
            if let Some(t) = threshold {
                cfg.eval.threshold = t;
                cfg.validate()?;
            }
            let report = cmd_evaluate(&checkpoint, variant, &cfg, subset, &out)?;
            println!("{}\n{}", effisegnet::eval::MetricsReport::CSV_HEADER, report.csv_row());
        }
        Command::Predict { checkpoint, variant, probs, threshold, out, images } => {
            let summary = cmd_predict(&checkpoint, variant, &images, &out, probs, threshold)?;
            println!(
                "{} mask(s), {} probability map(s), {} failure(s) in {}",
                summary.masks.len(),
                summary.probability_maps.len(),
                summary.failures.len(),
                out.display()
            );
        }
        Command::Params { which, json } => {
            let variants = if which.eq_ignore_ascii_case("all") { Variant::ALL.to_vec() } else { vec![which.parse()?] };
            let rows = cmd_params(&variants, &FusionHeadConfig::default())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).map_err(Error::from)?);
            } else {
                print!("{}", format_params_table(&rows));
            }
        }
        Command::Synth { out, count, size, seed } => {
            let n = cmd_synth(&out, count, size, seed)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
