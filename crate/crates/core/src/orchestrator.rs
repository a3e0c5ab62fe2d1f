//! Reproducible commands: `train`, `evaluate`, `predict`, `params` and the
//! synthetic-dataset generator. Every command that produces files writes a
//! [`RunManifest`] before starting work and updates it when done.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Variant, VariantConfig, WeightSource};
use crate::data::{
    index_dataset, load_image, load_split, normalize, resize_lanczos, resize_nearest, synthetic, DatasetSplit,
    FolderSource, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, DEFAULT_THRESHOLD};
use crate::fusion::FusionHeadConfig;
use crate::model::{count_parameters_for, EffiSegNet, ParamCount};
use crate::train::{fit, load_checkpoint, BatchSize, RunOutput, TrainConfig};
use crate::weights::{sha256_hex, write_atomic};

pub const RUN_MANIFEST: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SPLIT_FILE: &str = "split.json";

/// Rule used to pick the checkpoint evaluated on the test split.
pub const SELECTION_RULE: &str = "highest validation mDice (checkpoints/best.ckpt)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    /// Initialize the encoder from ImageNet weights.
    pub pretrained: bool,
    /// Explicit pretrained weight file; otherwise the weights directory
    /// environment variable is consulted.
    pub weights: Option<PathBuf>,
    /// Overrides the variant's native input side.
    pub input_resolution: Option<usize>,
    pub fusion: FusionHeadConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { variant: Variant::B4, pretrained: true, weights: None, input_resolution: None, fusion: FusionHeadConfig::default() }
    }
}

impl ModelSection {
    pub fn variant_config(&self) -> VariantConfig {
        let mut cfg = VariantConfig::new(self.variant);
        if let Some(r) = self.input_resolution {
            cfg = cfg.with_resolution(r);
        }
        match &self.weights {
            Some(path) => cfg.with_pretrained(WeightSource::File(path.clone())),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root with `images/` and `masks/`.
    pub root: Option<PathBuf>,
    pub split: SplitSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { root: None, split: SplitSpec::Generate(42) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, batch_size: 4 }
    }
}

/// Complete description of an experiment; serialized verbatim into each run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub variant: Option<Variant>,
    pub pretrained: Option<bool>,
    pub data_root: Option<PathBuf>,
    pub split: Option<SplitSpec>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<BatchSize>,
}

impl ExperimentConfig {
    /// Parses TOML (or JSON for `.json` files); unknown keys are errors that name the key.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(p) = o.pretrained {
            self.model.pretrained = p;
        }
        if let Some(r) = &o.data_root {
            self.data.root = Some(r.clone());
        }
        if let Some(s) = &o.split {
            self.data.split = s.clone();
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.fusion.validate()?;
        self.train.validate()?;
        if let Some(r) = self.model.input_resolution.filter(|&r| r < 32) {
            return Err(Error::Config(format!("model.input_resolution {r} is below the minimum of 32")));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) || self.eval.batch_size == 0 {
            return Err(Error::Config("eval.threshold must lie in [0, 1] and eval.batch_size be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    fn data_root(&self) -> Result<&Path> {
        self.data.root.as_deref().ok_or_else(|| Error::Config("data.root (or --data-root) is required".into()))
    }
}

/// Provenance record written into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub config: Option<ExperimentConfig>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub dataset_root: Option<PathBuf>,
    pub dataset_hash: Option<String>,
    pub split_hash: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub code_version: String,
    pub started: String,
    pub finished: Option<String>,
    /// Command-specific results (batch size, best epoch, selection rule, metrics…).
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            status: "running".into(),
            config: None,
            config_hash: None,
            seed: None,
            variant: None,
            dataset_root: None,
            dataset_hash: None,
            split_hash: None,
            checkpoint: None,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            details: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(RUN_MANIFEST), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Marks the run finished (or failed) and rewrites it.
    fn finish<T>(mut self, dir: &Path, result: &Result<T>) -> Result<()> {
        self.status = match result {
            Ok(_) => "completed".into(),
            Err(e) => format!("failed: {e}"),
        };
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.write(dir)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn resolve_data(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(FolderSource, DatasetSplit)> {
    let root = cfg.data_root()?;
    let index = index_dataset(root)?;
    let split = load_split(&index, &cfg.data.split)?;
    manifest.dataset_root = Some(root.to_path_buf());
    manifest.dataset_hash = Some(index.fingerprint());
    manifest.split_hash = Some(sha256_hex(split.to_json().as_bytes()));
    Ok((FolderSource { index }, split))
}

/// Trains per `cfg` into `out_dir`:
/// `config.toml`, `run.json`, `split.json`, `history.csv`, `checkpoints/{best,last}.ckpt`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    create_dir(out_dir)?;
    write_atomic(&out_dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut manifest = RunManifest::new("train");
    manifest.config = Some(cfg.clone());
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.train.seed);
    manifest.variant = Some(cfg.model.variant);
    manifest.write(out_dir)?;

    let result = (|| {
        let (source, split) = resolve_data(cfg, &mut manifest)?;
        write_atomic(&out_dir.join(SPLIT_FILE), split.to_json().as_bytes())?;
        manifest.write(out_dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let mut model =
            EffiSegNet::new(&cfg.model.variant_config(), cfg.model.fusion.clone(), cfg.model.pretrained, &mut rng)?;
        let out = RunOutput { dir: out_dir.to_path_buf(), config_hash: cfg.hash() };
        let run = fit(&mut model, &source, &split, &cfg.train, Some(&out))?;
        manifest.checkpoint = run.best_checkpoint.clone().or(run.last_checkpoint.clone());
        manifest.details = serde_json::json!({
            "epochs_completed": run.history.len(),
            "batch_size": run.batch_size,
            "best_epoch": run.best_epoch,
            "selection_rule": SELECTION_RULE,
            "parameters": model.count_parameters(),
        });
        Ok(())
    })();
    manifest.finish(out_dir, &result)?;
    result.map(|_| out_dir.to_path_buf())
}

/// Which split list `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" | "validation" => Ok(Subset::Validation),
            "test" => Ok(Subset::Test),
            _ => Err(Error::Config(format!("unknown subset `{s}` (train, validation, test)"))),
        }
    }
}

/// Scores a checkpoint on one split list and writes `metrics.json` / `metrics.csv`.
pub fn cmd_evaluate(
    checkpoint: &Path,
    variant: Option<Variant>,
    cfg: &ExperimentConfig,
    subset: Subset,
    out_dir: &Path,
) -> Result<MetricsReport> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("evaluate");
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.variant = variant;
    manifest.write(out_dir)?;
    let result = (|| {
        let (model, ckpt) = load_checkpoint(checkpoint, variant)?;
        manifest.variant = Some(ckpt.variant);
        manifest.seed = Some(ckpt.seed);
        manifest.config_hash = Some(ckpt.config_hash.clone());
        let (source, split) = resolve_data(cfg, &mut manifest)?;
        let ids = match subset {
            Subset::Train => &split.train,
            Subset::Validation => &split.val,
            Subset::Test => &split.test,
        };
        let name = format!("EffiSegNet-{}", ckpt.variant);
        let resolution = model.variant().input_resolution;
        let report = evaluate(&name, &model, &source, ids, resolution, cfg.eval.threshold, cfg.eval.batch_size)?;
        report.write(&out_dir.join("metrics"))?;
        manifest.details = serde_json::json!({
            "subset": subset,
            "images": ids.len(),
            "f1": report.f1, "mdice": report.mdice, "miou": report.miou,
            "precision": report.precision, "recall": report.recall,
            "threshold": report.threshold,
        });
        Ok(report)
    })();
    manifest.finish(out_dir, &result)?;
    result
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictSummary {
    pub masks: Vec<PathBuf>,
    pub probability_maps: Vec<PathBuf>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Writes `.npy` (little-endian `f32`, C order) with the given shape.
pub fn write_npy(path: &Path, shape: &[u64], data: &[f32]) -> Result<()> {
    let mut bytes = Vec::new();
    use npyz::WriterBuilder;
    let mut writer = npyz::WriteOptions::<f32>::new()
        .default_dtype()
        .shape(shape)
        .writer(&mut bytes)
        .begin_nd()
        .map_err(|e| Error::io(path, e))?;
    writer.extend(data.iter().copied()).map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))?;
    write_atomic(path, &bytes)
}

/// Predicts a binary mask for each image at its original resolution
/// (`<stem>_mask.png`, 0/255) and optionally the probability map
/// (`<stem>_prob.npy`). Unreadable images are reported and skipped.
pub fn cmd_predict(
    checkpoint: &Path,
    variant: Option<Variant>,
    images: &[PathBuf],
    out_dir: &Path,
    probabilities: bool,
    threshold: f64,
) -> Result<PredictSummary> {
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("predict");
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.variant = variant;
    manifest.write(out_dir)?;
    let result = (|| {
        let mut summary = PredictSummary::default();
        if images.is_empty() {
            log::warn!("no input images; nothing to predict");
            return Ok(summary);
        }
        let (model, ckpt) = load_checkpoint(checkpoint, variant)?;
        manifest.variant = Some(ckpt.variant);
        let r = model.variant().input_resolution;
        for path in images {
            let one = || -> Result<(PathBuf, Option<PathBuf>)> {
                let img = load_image(path)?;
                let (w, h) = (img.width, img.height);
                let probs = model.predict_mask_probabilities(&normalize(&resize_lanczos(&img, r, r)))?;
                let full = resize_nearest(probs.data(), (r, r), (h, w));
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
                let mask_path = out_dir.join(format!("{stem}_mask.png"));
                let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                    Luma([if f64::from(full[y as usize * w + x as usize]) >= threshold { 255 } else { 0 }])
                });
                mask.save(&mask_path)?;
                let prob_path = if probabilities {
                    let p = out_dir.join(format!("{stem}_prob.npy"));
                    write_npy(&p, &[h as u64, w as u64], &full)?;
                    Some(p)
                } else {
                    None
                };
                Ok((mask_path, prob_path))
            };
            match one() {
                Ok((m, p)) => {
                    summary.masks.push(m);
                    summary.probability_maps.extend(p);
                }
                Err(e) => {
                    log::error!("{}: {e}", path.display());
                    summary.failures.push((path.clone(), e.to_string()));
                }
            }
        }
        manifest.details = serde_json::json!({
            "masks": summary.masks.len(),
            "probability_maps": summary.probability_maps.len(),
            "failures": summary.failures.len(),
            "threshold": threshold,
        });
        Ok(summary)
    })();
    manifest.finish(out_dir, &result)?;
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub variant: Variant,
    #[serde(flatten)]
    pub count: ParamCount,
}

/// Parameter partition per variant; needs neither data nor weights.
pub fn cmd_params(variants: &[Variant], fusion: &FusionHeadConfig) -> Result<Vec<ParamRow>> {
    variants.iter().map(|&variant| Ok(ParamRow { variant, count: count_parameters_for(variant, fusion)? })).collect()
}

/// Human-readable table: millions (as commonly reported) plus exact counts.
pub fn format_params_table(rows: &[ParamRow]) -> String {
    let mut s = format!(
        "{:<14} {:>10} {:>8} {:>8}   {:>12} {:>10}\n",
        "model", "pretrained", "random", "ratio", "pretrained#", "random#"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>9.1}M {:>7.2}M {:>7.2}%   {:>12} {:>10}\n",
            format!("EffiSegNet-{}", r.variant),
            r.count.pretrained as f64 / 1e6,
            r.count.random as f64 / 1e6,
            100.0 * r.count.ratio(),
            r.count.pretrained,
            r.count.random
        ));
    }
    s
}

/// Writes a synthetic dataset (`images/`, `masks/`) of `n` square samples.
pub fn cmd_synth(root: &Path, n: usize, size: usize, seed: u64) -> Result<usize> {
    if n == 0 || size < 8 {
        return Err(Error::Config("synth needs at least one sample of side ≥ 8".into()));
    }
    synthetic::write_dataset(root, &synthetic::blobs(n, size, seed))?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_key_is_named() {
        let err = toml::from_str::<ExperimentConfig>("[train]\nepochz = 3\n").unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn config_round_trips_and_overrides_apply() {
        let mut cfg: ExperimentConfig = toml::from_str(
            "[model]\nvariant = \"b0\"\npretrained = false\n[data]\nsplit = \"generate:7\"\n[train]\nbatch_size = \"auto\"\n",
        )
        .unwrap();
        assert_eq!(cfg.model.variant, Variant::B0);
        assert_eq!(cfg.train.batch_size, BatchSize::Auto);
        assert_eq!(cfg.train.epochs, 300);
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.apply(&Overrides { epochs: Some(0), seed: Some(9), variant: Some(Variant::B4), ..Default::default() });
        assert_eq!((cfg.train.epochs, cfg.train.seed, cfg.model.variant), (0, 9, Variant::B4));
        assert_ne!(back.hash(), cfg.hash());
    }

    #[test]
    fn params_table_lists_all_variants() {
        let rows = cmd_params(&Variant::ALL, &FusionHeadConfig::default()).unwrap();
        let table = format_params_table(&rows);
        assert_eq!(table.lines().count(), 9);
        assert!(table.contains("EffiSegNet-B0") && table.contains("4.0M") && table.contains("0.15M"));
    }

    #[test]
    fn npy_header_describes_shape() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("a.npy");
        write_npy(&p, &[2, 3], &[0.0, 0.5, 1.0, 0.25, 0.75, 0.125]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        let header = String::from_utf8_lossy(&bytes[10..80]);
        assert!(header.contains("'<f4'") && header.contains("'shape': (2, 3"), "{header}");
        assert_eq!(f32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()), 0.125);
    }
}
