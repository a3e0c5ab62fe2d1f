use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::batch_search::{available_memory, find_max_batch_size, MemoryBudgetProbe, StepProbe};
use super::checkpoint::{save_checkpoint, CheckpointInfo};
use super::loss::{combined_loss, combined_loss_grad, DEFAULT_DICE_SMOOTH};
use super::optim::{AdamW, AdamWConfig};
use super::schedule::lr_at_epoch;
use crate::data::{make_batch, AugmentationConfig, DatasetSplit, SampleSource};
use crate::error::{Error, Result};
use crate::eval::confusion_counts;
use crate::model::EffiSegNet;
use crate::nn::Visit;

/// Fixed batch size or "find the largest that fits".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Fixed(usize),
    Auto,
}

impl FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BatchSize::Auto);
        }
        match s.parse() {
            Ok(n) if n > 0 => Ok(BatchSize::Fixed(n)),
            _ => Err(Error::Config(format!("batch size `{s}`: expected a positive integer or `auto`"))),
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Fixed(n) => write!(f, "{n}"),
            BatchSize::Auto => f.write_str("auto"),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Fixed(n) => s.serialize_u64(*n as u64),
            BatchSize::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(n) => format!("{n}").parse(),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    /// Upper bound of the batch-size search when `batch_size = "auto"`.
    pub batch_search_upper: usize,
    pub eval_batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dice_smooth: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: BatchSize::Fixed(8),
            batch_search_upper: 64,
            eval_batch_size: 4,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dice_smooth: DEFAULT_DICE_SMOOTH,
            seed: 42,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("training: {m}")));
        if !(self.lr_initial > 0.0 && self.lr_final >= 0.0 && self.lr_final <= self.lr_initial) {
            return bad(format!("need 0 ≤ lr_final ≤ lr_initial, 0 < lr_initial (got {} → {})", self.lr_initial, self.lr_final));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        if !(self.dice_smooth > 0.0) {
            return bad("dice_smooth must be positive".into());
        }
        if self.batch_size == BatchSize::Fixed(0) || self.batch_search_upper == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        self.augmentation.validate()
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, weight_decay: self.weight_decay }
    }
}

/// One row of `history.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index; `lr` is the schedule value at this index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mdice: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_mdice,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_mdice, r.lr));
    }
    s
}

/// Where `fit` persists history and checkpoints.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub config_hash: String,
}

impl RunOutput {
    pub fn history_path(&self) -> PathBuf {
        self.dir.join("history.csv")
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{name}.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub history: Vec<EpochRecord>,
    /// Epoch with the highest validation mDice.
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub batch_size: usize,
}

fn epoch_order(ids: &[String], seed: u64, epoch: usize) -> Vec<String> {
    let digest = Sha256::digest(format!("{seed}:order:{epoch}").as_bytes());
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::from_seed(digest.into()));
    order
}

fn memory_budget() -> Option<usize> {
    available_memory().map(|m| m / 10 * 8)
}

fn resolve_batch_size(model: &EffiSegNet, cfg: &TrainConfig, train_len: usize) -> Result<usize> {
    let resolution = model.variant().input_resolution;
    match cfg.batch_size {
        BatchSize::Auto => {
            let budget = memory_budget().unwrap_or(usize::MAX);
            let mut probe = MemoryBudgetProbe::measure(model, resolution, budget)?;
            let upper = cfg.batch_search_upper.min(train_len).max(1);
            let b = find_max_batch_size(&mut probe, upper)?;
            log::info!("batch-size search: {b} (upper bound {upper}, predicted {} MiB)", probe.predicted_bytes(b) >> 20);
            Ok(b)
        }
        BatchSize::Fixed(b) => {
            if let Some(budget) = memory_budget() {
                let mut probe = MemoryBudgetProbe::measure(model, resolution, budget)?;
                if !probe.try_step(b) {
                    return Err(Error::Resource(format!(
                        "batch size {b} needs about {} MiB but only {} MiB are available; rerun with --batch-size auto",
                        probe.predicted_bytes(b) >> 20,
                        budget >> 20
                    )));
                }
            }
            Ok(b)
        }
    }
}

/// Mean combined loss and mean per-image Dice over `ids`, in evaluation mode.
pub fn validation_scores(
    model: &EffiSegNet,
    source: &dyn SampleSource,
    ids: &[String],
    batch_size: usize,
    dice_smooth: f64,
) -> Result<(f64, f64)> {
    if ids.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let resolution = model.variant().input_resolution;
    let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
    for chunk in ids.chunks(batch_size) {
        let (x, m) = make_batch(source, chunk, resolution, None)?;
        let probs = model.predict_mask_probabilities(&x)?;
        loss_sum += combined_loss(&probs, &m, dice_smooth)? * chunk.len() as f64;
        for i in 0..chunk.len() {
            dice_sum += confusion_counts(probs.sample(i), m.sample(i), 0.5)?.overlap().0;
        }
    }
    Ok((loss_sum / ids.len() as f64, dice_sum / ids.len() as f64))
}

/// Mini-batch training with the combined loss, AdamW and the cosine
/// schedule; validates every epoch and keeps `last` and `best` checkpoints.
pub fn fit(
    model: &mut EffiSegNet,
    source: &dyn SampleSource,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    out: Option<&RunOutput>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    let info = |epoch, metrics| CheckpointInfo {
        seed: cfg.seed,
        epoch,
        config_hash: out.map(|o| o.config_hash.clone()).unwrap_or_default(),
        metrics,
    };
    let mut run =
        TrainingRun { history: Vec::new(), best_epoch: None, best_checkpoint: None, last_checkpoint: None, batch_size: 0 };
    if let Some(o) = out {
        std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
        crate::weights::write_atomic(&o.history_path(), history_csv(&[]).as_bytes())?;
    }
    if cfg.epochs == 0 {
        if let Some(o) = out {
            let path = o.checkpoint_path("last");
            save_checkpoint(model, &path, info(0, None))?;
            run.last_checkpoint = Some(path);
        }
        return Ok(run);
    }
    if split.train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let batch_size = resolve_batch_size(model, cfg, split.train.len())?;
    run.batch_size = batch_size;
    let resolution = model.variant().input_resolution;
    let augmentation = cfg.augmentation.enabled.then_some(&cfg.augmentation);
    let mut optimizer = AdamW::new(cfg.adamw());
    let mut best = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg.epochs, cfg.lr_initial, cfg.lr_final)?;
        let order = epoch_order(&split.train, cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let (x, target) = make_batch(source, chunk, resolution, augmentation.map(|a| (a, cfg.seed, epoch)))?;
            model.zero_grad();
            let probs = model.forward_train(&x)?;
            let (loss, grad) = combined_loss_grad(&probs, &target, cfg.dice_smooth)?;
            if !loss.is_finite() {
                return Err(Error::Numerical { epoch, step, detail: format!("training loss is {loss} (lr {lr:e})") });
            }
            model.backward(&grad)?;
            optimizer.step(model, lr);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_mdice) = validation_scores(model, source, &split.val, cfg.eval_batch_size, cfg.dice_smooth)?;
        let record = EpochRecord { epoch, train_loss, val_loss, val_mdice, lr };
        run.history.push(record);
        log::info!(
            "epoch {:>4}/{}  lr {lr:.3e}  train {train_loss:.4}  val {val_loss:.4}  mDice {val_mdice:.4}",
            epoch + 1,
            cfg.epochs
        );
        // Without a validation split every epoch counts as the best so far.
        let improved = val_mdice.is_nan() || val_mdice > best;
        if improved {
            best = if val_mdice.is_nan() { best } else { val_mdice };
            run.best_epoch = Some(epoch);
        }
        if let Some(o) = out {
            crate::weights::write_atomic(&o.history_path(), history_csv(&run.history).as_bytes())?;
            let last = o.checkpoint_path("last");
            save_checkpoint(model, &last, info(epoch + 1, Some(record)))?;
            run.last_checkpoint = Some(last);
            if improved {
                let best_path = o.checkpoint_path("best");
                save_checkpoint(model, &best_path, info(epoch + 1, Some(record)))?;
                run.best_checkpoint = Some(best_path);
            }
        }
    }
    Ok(run)
}

/// Reads a `history.csv` written by [`fit`].
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |line: &str| -> Option<EpochRecord> {
        let f: Vec<&str> = line.split(',').collect();
        Some(EpochRecord {
            epoch: f.first()?.parse().ok()?,
            train_loss: f.get(1)?.parse().ok()?,
            val_loss: f.get(2)?.parse().ok()?,
            val_mdice: f.get(3)?.parse().ok()?,
            lr: f.get(4)?.parse().ok()?,
        })
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| parse(l).ok_or_else(|| Error::Serde(format!("{}: malformed history row `{l}`", path.display()))))
        .collect()
}
