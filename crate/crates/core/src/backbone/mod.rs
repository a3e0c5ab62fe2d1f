//! EfficientNet B0–B7 encoder exposing the last feature map at each of the
//! five resolutions (1/2 … 1/32) for full-scale fusion.

mod blocks;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{MbConv, MbConvConfig, SqueezeExcite};

use crate::error::{Error, Result};
use crate::nn::{join, Activation, BatchNormConfig, Conv2dConfig, ConvBnAct, Init, Slot, View, Visit};
use crate::tensor::{Real, Tensor};
use crate::weights;

/// Number of extracted stages (network depth).
pub const DEPTH: usize = 5;

/// Environment variable naming the directory that holds pretrained backbones.
pub const WEIGHTS_DIR_ENV: &str = "EFFISEGNET_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    B0,
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
}

impl Variant {
    pub const ALL: [Variant; 8] =
        [Variant::B0, Variant::B1, Variant::B2, Variant::B3, Variant::B4, Variant::B5, Variant::B6, Variant::B7];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Square input side the backbone was pretrained at.
    pub fn input_resolution(self) -> usize {
        [224, 240, 260, 300, 380, 456, 528, 600][self.index()]
    }

    /// Compound-scaling (width, depth) multipliers.
    pub fn scaling(self) -> (f64, f64) {
        [(1.0, 1.0), (1.0, 1.1), (1.1, 1.2), (1.2, 1.4), (1.4, 1.8), (1.6, 2.2), (1.8, 2.6), (2.0, 3.1)][self.index()]
    }

    /// Batch-norm settings of the reference weights (B5–B7 were ported with
    /// the original TensorFlow statistics settings).
    pub fn batch_norm(self) -> BatchNormConfig {
        match self {
            Variant::B5 | Variant::B6 | Variant::B7 => BatchNormConfig { eps: 1e-3, momentum: 0.01 },
            _ => BatchNormConfig::default(),
        }
    }

    pub fn slug(self) -> &'static str {
        ["b0", "b1", "b2", "b3", "b4", "b5", "b6", "b7"][self.index()]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.index())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("effisegnet-").or_else(|| t.strip_prefix("efficientnet-")).unwrap_or(&t);
        Variant::ALL
            .into_iter()
            .find(|v| v.slug() == t)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected one of b0..b7)")))
    }
}

/// Where pretrained backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    None,
    /// An explicit weight file.
    File(PathBuf),
    /// A directory containing `efficientnet_<variant>.weights`.
    CacheDir(PathBuf),
    /// The directory named by `EFFISEGNET_WEIGHTS_DIR`.
    Env,
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSource::None => write!(f, "none"),
            WeightSource::File(p) => write!(f, "file:{}", p.display()),
            WeightSource::CacheDir(p) => write!(f, "dir:{}", p.display()),
            WeightSource::Env => write!(f, "env:{WEIGHTS_DIR_ENV}"),
        }
    }
}

impl WeightSource {
    pub fn file_name(variant: Variant) -> String {
        format!("efficientnet_{}.weights", variant.slug())
    }

    pub fn resolve(&self, variant: Variant) -> Result<PathBuf> {
        let fail = |reason: String| Error::WeightLoad { source_name: self.to_string(), reason };
        match self {
            WeightSource::None => Err(fail("no pretrained weight source configured".into())),
            WeightSource::File(p) => Ok(p.clone()),
            WeightSource::CacheDir(dir) => Ok(dir.join(Self::file_name(variant))),
            WeightSource::Env => match std::env::var_os(WEIGHTS_DIR_ENV) {
                Some(dir) => Ok(PathBuf::from(dir).join(Self::file_name(variant))),
                None => Err(fail(format!("{WEIGHTS_DIR_ENV} is not set"))),
            },
        }
    }
}

/// Sidecar manifest of a pretrained backbone file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedManifest {
    pub variant: Variant,
    /// Where the weights originally came from (URL or content hash).
    pub origin: String,
    pub sha256: String,
    pub date: String,
}

/// `foo.weights` → `foo.manifest.json`.
pub fn manifest_path(weights: &Path) -> PathBuf {
    weights.with_extension("manifest.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub input_resolution: usize,
    /// Channels of the five extracted stages, finest to coarsest.
    pub stage_channels: [usize; DEPTH],
    pub pretrained_source: WeightSource,
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        let stages = stage_specs(variant);
        let taps = tapped_stages(&stages);
        let mut stage_channels = [0; DEPTH];
        for (slot, (spec, _)) in stage_channels.iter_mut().zip(stages.iter().zip(&taps).filter(|(_, &t)| t)) {
            *slot = spec.out_channels;
        }
        Self { variant, input_resolution: variant.input_resolution(), stage_channels, pretrained_source: WeightSource::None }
    }

    pub fn with_pretrained(mut self, source: WeightSource) -> Self {
        self.pretrained_source = source;
        self
    }

    /// Overrides the input side (e.g. small inputs for tests and demos).
    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.input_resolution = resolution;
        self
    }

    /// Spatial side of stage `s` (1-based), `ceil(input / 2^s)`.
    pub fn stage_size(&self, s: usize) -> usize {
        (1..=s).fold(self.input_resolution, |acc, _| acc.div_ceil(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: usize,
}

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut new_v = divisor.max(((v + d / 2.0) as usize) / divisor * divisor);
    if (new_v as f64) < 0.9 * v {
        new_v += divisor;
    }
    new_v
}

fn adjust_channels(c: usize, width: f64) -> usize {
    make_divisible(c as f64 * width, 8)
}

/// The seven MBConv stages of a variant after compound scaling.
pub fn stage_specs(variant: Variant) -> Vec<StageSpec> {
    // (expand, kernel, stride, in, out, layers) for B0.
    const BASE: [(usize, usize, usize, usize, usize, usize); 7] = [
        (1, 3, 1, 32, 16, 1),
        (6, 3, 2, 16, 24, 2),
        (6, 5, 2, 24, 40, 2),
        (6, 3, 2, 40, 80, 3),
        (6, 5, 1, 80, 112, 3),
        (6, 5, 2, 112, 192, 4),
        (6, 3, 1, 192, 320, 1),
    ];
    let (width, depth) = variant.scaling();
    BASE.iter()
        .map(|&(e, k, s, i, o, n)| StageSpec {
            expand_ratio: e,
            kernel: k,
            stride: s,
            in_channels: adjust_channels(i, width),
            out_channels: adjust_channels(o, width),
            layers: (n as f64 * depth).ceil() as usize,
        })
        .collect()
}

/// A stage is extracted when it is the last one at its resolution.
fn tapped_stages(stages: &[StageSpec]) -> Vec<bool> {
    (0..stages.len()).map(|i| i + 1 == stages.len() || stages[i + 1].stride == 2).collect()
}

/// Encoder outputs: the raw input (stage 0) plus five feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePyramid<T = f32> {
    pub stage0_input: Tensor<T>,
    pub stages: Vec<Tensor<T>>,
}

impl<T: Real> StagePyramid<T> {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<T: Real = f32> {
    config: VariantConfig,
    stem: ConvBnAct<T>,
    stages: Vec<Vec<MbConv<T>>>,
    /// 1×1 expansion that feeds the classifier in the source network. Kept
    /// so pretrained files load unchanged; the extracted stages do not use it.
    head: ConvBnAct<T>,
    tapped: Vec<bool>,
}

impl<T: Real> Encoder<T> {
    /// Randomly initialized encoder.
    pub fn new<R: Rng + ?Sized>(config: VariantConfig, rng: &mut R) -> Result<Self> {
        let variant = config.variant;
        let bn = variant.batch_norm();
        let init = Init::KaimingNormalFanOut;
        let (width, _) = variant.scaling();
        let specs = stage_specs(variant);
        let stem_out = adjust_channels(32, width);
        let stem = ConvBnAct::new(Conv2dConfig::new(3, stem_out, 3).with_stride(2), bn, Activation::Silu, init, rng)?;
        let mut stages = Vec::with_capacity(specs.len());
        for spec in &specs {
            let mut blocks = Vec::with_capacity(spec.layers);
            for j in 0..spec.layers {
                let cfg = MbConvConfig {
                    expand_ratio: spec.expand_ratio,
                    kernel: spec.kernel,
                    stride: if j == 0 { spec.stride } else { 1 },
                    in_channels: if j == 0 { spec.in_channels } else { spec.out_channels },
                    out_channels: spec.out_channels,
                };
                blocks.push(MbConv::new(cfg, bn, rng)?);
            }
            stages.push(blocks);
        }
        let last = specs.last().expect("seven stages").out_channels;
        let head = ConvBnAct::new(Conv2dConfig::new(last, 4 * last, 1), bn, Activation::Silu, init, rng)?;
        let tapped = tapped_stages(&specs);
        debug_assert_eq!(tapped.iter().filter(|&&t| t).count(), DEPTH);
        Ok(Self { config, stem, stages, head, tapped })
    }

    pub fn config(&self) -> &VariantConfig {
        &self.config
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let r = self.config.input_resolution;
        if batch.channels() != 3 || batch.height() != r || batch.width() != r {
            return Err(Error::Shape(format!(
                "EfficientNet-{} expects N×3×{r}×{r} input, got {:?}",
                self.config.variant,
                batch.shape()
            )));
        }
        if batch.batch() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    pub fn encode_stages(&self, batch: &Tensor<T>) -> Result<StagePyramid<T>> {
        self.check_input(batch)?;
        let mut x = self.stem.forward(batch)?;
        let mut stages = Vec::with_capacity(DEPTH);
        for (blocks, &tap) in self.stages.iter().zip(&self.tapped) {
            for b in blocks {
                x = b.forward(&x)?;
            }
            if tap {
                stages.push(x.clone());
            }
        }
        Ok(StagePyramid { stage0_input: batch.clone(), stages })
    }

    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<StagePyramid<T>> {
        self.check_input(batch)?;
        let mut x = self.stem.forward_train(batch.clone())?;
        let mut stages = Vec::with_capacity(DEPTH);
        for (blocks, &tap) in self.stages.iter_mut().zip(&self.tapped) {
            for b in blocks.iter_mut() {
                x = b.forward_train(x)?;
            }
            if tap {
                stages.push(x.clone());
            }
        }
        Ok(StagePyramid { stage0_input: batch.clone(), stages })
    }

    /// Back-propagates gradients arriving at the five extracted stages.
    pub fn backward(&mut self, stage_grads: Vec<Tensor<T>>) -> Result<()> {
        if stage_grads.len() != DEPTH {
            return Err(Error::Contract(format!("expected {DEPTH} stage gradients, got {}", stage_grads.len())));
        }
        let mut pending = stage_grads;
        let mut g: Option<Tensor<T>> = None;
        for (blocks, &tap) in self.stages.iter_mut().zip(&self.tapped).rev() {
            if tap {
                let tg = pending.pop().expect("one gradient per tap");
                g = Some(match g {
                    None => tg,
                    Some(mut acc) => {
                        acc.add_assign(&tg)?;
                        acc
                    }
                });
            }
            for b in blocks.iter_mut().rev() {
                let grad = g.take().expect("gradient flows from the last stage");
                g = Some(b.backward(grad)?);
            }
        }
        self.stem.backward(g.expect("stem receives a gradient"))?;
        Ok(())
    }

    pub fn cached_bytes(&self) -> usize {
        self.stem.cached_bytes() + self.stages.iter().flatten().map(MbConv::cached_bytes).sum::<usize>()
    }

    /// Loads backbone weights from the configured source, verifying the
    /// sidecar manifest (variant and SHA-256).
    pub fn load_pretrained(&mut self, source: &WeightSource) -> Result<PretrainedManifest> {
        let variant = self.config.variant;
        let path = source.resolve(variant)?;
        let fail = |reason: String| Error::WeightLoad { source_name: path.display().to_string(), reason };
        let bytes = std::fs::read(&path).map_err(|e| fail(e.to_string()))?;
        let mpath = manifest_path(&path);
        let manifest: PretrainedManifest = serde_json::from_slice(
            &std::fs::read(&mpath).map_err(|e| fail(format!("manifest {}: {e}", mpath.display())))?,
        )
        .map_err(|e| fail(format!("manifest {}: {e}", mpath.display())))?;
        if manifest.variant != variant {
            return Err(fail(format!("weights are for EfficientNet-{}, not {variant}", manifest.variant)));
        }
        let digest = weights::sha256_hex(&bytes);
        if digest != manifest.sha256 {
            return Err(fail(format!("sha256 mismatch: file {digest}, manifest {}", manifest.sha256)));
        }
        let tensors = weights::decode(&bytes).map_err(fail)?;
        weights::assign(self, "", &weights::index(tensors), str::to_string).map_err(fail)?;
        self.config.pretrained_source = source.clone();
        Ok(manifest)
    }

    /// Writes the backbone in the pretrained-weight layout with its manifest.
    pub fn save_pretrained(&self, path: &Path, origin: &str) -> Result<PretrainedManifest> {
        let bytes = weights::encode(&weights::collect(self, ""));
        weights::write_atomic(path, &bytes)?;
        let manifest = PretrainedManifest {
            variant: self.config.variant,
            origin: origin.to_string(),
            sha256: weights::sha256_hex(&bytes),
            date: chrono::Utc::now().to_rfc3339(),
        };
        weights::write_atomic(&manifest_path(path), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

impl<T: Real> Visit<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        let features = join(prefix, "features");
        self.stem.visit(&join(&features, "0"), f);
        for (i, blocks) in self.stages.iter().enumerate() {
            for (j, b) in blocks.iter().enumerate() {
                b.visit(&format!("{features}.{}.{j}", i + 1), f);
            }
        }
        self.head.visit(&join(&features, &(self.stages.len() + 1).to_string()), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        let features = join(prefix, "features");
        self.stem.visit_mut(&join(&features, "0"), f);
        for (i, blocks) in self.stages.iter_mut().enumerate() {
            for (j, b) in blocks.iter_mut().enumerate() {
                b.visit_mut(&format!("{features}.{}.{j}", i + 1), f);
            }
        }
        let head_index = self.stages.len() + 1;
        self.head.visit_mut(&join(&features, &head_index.to_string()), f);
    }
}

/// Builds an encoder, loading pretrained weights when requested.
pub fn build_encoder<T: Real, R: Rng + ?Sized>(config: &VariantConfig, pretrained: bool, rng: &mut R) -> Result<Encoder<T>> {
    let mut encoder = Encoder::new(config.clone(), rng)?;
    if pretrained {
        let source = match &config.pretrained_source {
            WeightSource::None => WeightSource::Env,
            s => s.clone(),
        };
        encoder.load_pretrained(&source)?;
    } else {
        encoder.config.pretrained_source = WeightSource::None;
    }
    Ok(encoder)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn variant_parsing_and_resolutions() {
        assert_eq!("b4".parse::<Variant>().unwrap(), Variant::B4);
        assert_eq!("EffiSegNet-B7".parse::<Variant>().unwrap(), Variant::B7);
        assert!(matches!("b8".parse::<Variant>(), Err(Error::Config(_))));
        let res: Vec<_> = Variant::ALL.iter().map(|v| v.input_resolution()).collect();
        assert_eq!(res, [224, 240, 260, 300, 380, 456, 528, 600]);
    }

    /// Stage widths recorded from the torchvision reference implementation.
    #[test]
    fn stage_channels_match_reference_backbones() {
        let expected = [
            [16, 24, 40, 112, 320],
            [16, 24, 40, 112, 320],
            [16, 24, 48, 120, 352],
            [24, 32, 48, 136, 384],
            [24, 32, 56, 160, 448],
            [24, 40, 64, 176, 512],
            [32, 40, 72, 200, 576],
            [32, 48, 80, 224, 640],
        ];
        for (v, want) in Variant::ALL.iter().zip(expected) {
            assert_eq!(VariantConfig::new(*v).stage_channels, want, "{v}");
        }
    }

    #[test]
    fn stage_sizes_use_ceil_division() {
        let cfg = VariantConfig::new(Variant::B4);
        let sizes: Vec<_> = (1..=5).map(|s| cfg.stage_size(s)).collect();
        assert_eq!(sizes, [190, 95, 48, 24, 12]);
    }

    #[test]
    fn scratch_encoders_differ_by_seed() {
        let cfg = VariantConfig::new(Variant::B0);
        let a = Encoder::<f32>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = Encoder::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a.stem.conv.weight.value, b.stem.conv.weight.value);
    }

    #[test]
    fn rejects_wrong_resolution() {
        let enc = Encoder::<f32>::new(VariantConfig::new(Variant::B0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = enc.encode_stages(&Tensor::zeros([1, 3, 256, 256])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn missing_weight_source_names_the_source() {
        let cfg = VariantConfig::new(Variant::B0).with_pretrained(WeightSource::File("/nonexistent/b0.weights".into()));
        let err = build_encoder::<f32, _>(&cfg, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            Error::WeightLoad { source_name, .. } => assert!(source_name.contains("/nonexistent/b0.weights")),
            e => panic!("unexpected {e}"),
        }
    }
}
