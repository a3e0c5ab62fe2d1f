use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{build_encoder, Encoder, StagePyramid, Variant, VariantConfig};
use crate::error::Result;
use crate::fusion::{FusionHead, FusionHeadConfig};
use crate::nn::{join, Slot, TensorKind, View, Visit};
use crate::tensor::{Real, Tensor};

/// Prefix under which backbone tensors are stored; everything else is decoder.
pub const ENCODER_PREFIX: &str = "encoder";
pub const HEAD_PREFIX: &str = "head";

/// Learnable-weight partition into the backbone (pretrainable) part and the
/// randomly initialized decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub pretrained: usize,
    pub random: usize,
    pub total: usize,
}

impl ParamCount {
    /// Random-to-pretrained ratio.
    pub fn ratio(&self) -> f64 {
        self.random as f64 / self.pretrained as f64
    }
}

/// EfficientNet encoder + full-scale additive fusion head.
#[derive(Debug, Clone)]
pub struct EffiSegNet<T: Real = f32> {
    encoder: Encoder<T>,
    head: FusionHead<T>,
}

impl<T: Real> EffiSegNet<T> {
    pub fn new<R: Rng + ?Sized>(
        variant: &VariantConfig,
        fusion: FusionHeadConfig,
        pretrained: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = build_encoder(variant, pretrained, rng)?;
        let head = FusionHead::for_variant(fusion, variant, rng)?;
        Ok(Self { encoder, head })
    }

    /// Randomly initialized model with the default head.
    pub fn scratch<R: Rng + ?Sized>(variant: Variant, rng: &mut R) -> Result<Self> {
        Self::new(&VariantConfig::new(variant), FusionHeadConfig::default(), false, rng)
    }

    pub fn variant(&self) -> &VariantConfig {
        self.encoder.config()
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder<T> {
        &mut self.encoder
    }

    pub fn head(&self) -> &FusionHead<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut FusionHead<T> {
        &mut self.head
    }

    pub fn encode_stages(&self, batch: &Tensor<T>) -> Result<StagePyramid<T>> {
        self.encoder.encode_stages(batch)
    }

    /// Evaluation-mode forward pass: `N×3×R×R` normalized images to
    /// `N×1×R×R` foreground probabilities.
    pub fn predict_mask_probabilities(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.head.forward(&self.encoder.encode_stages(batch)?)
    }

    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let pyramid = self.encoder.forward_train(batch)?;
        self.head.forward_train(pyramid)
    }

    /// Accumulates parameter gradients from `∂L/∂probs`.
    pub fn backward(&mut self, dprobs: &Tensor<T>) -> Result<()> {
        let stage_grads = self.head.backward(dprobs)?;
        self.encoder.backward(stage_grads)
    }

    /// Bytes held by training caches after `forward_train`.
    pub fn cached_bytes(&self) -> usize {
        self.encoder.cached_bytes() + self.head.cached_bytes()
    }

    pub fn count_parameters(&self) -> ParamCount {
        let pretrained = self.encoder.num_params();
        let random = self.head.num_params();
        ParamCount { pretrained, random, total: pretrained + random }
    }
}

impl<T: Real> Visit<T> for EffiSegNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        self.encoder.visit(&join(prefix, ENCODER_PREFIX), f);
        self.head.visit(&join(prefix, HEAD_PREFIX), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.encoder.visit_mut(&join(prefix, ENCODER_PREFIX), f);
        self.head.visit_mut(&join(prefix, HEAD_PREFIX), f);
    }
}

/// Parameter partition of a variant with the given head, computed without
/// any weights on disk.
pub fn count_parameters_for(variant: Variant, fusion: &FusionHeadConfig) -> Result<ParamCount> {
    // Initialization values do not matter for counting.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = EffiSegNet::<f32>::new(&VariantConfig::new(variant), fusion.clone(), false, &mut rng)?;
    Ok(model.count_parameters())
}

/// Names of all learnable tensors, in traversal order.
pub fn param_names<T: Real, M: Visit<T>>(module: &M) -> Vec<String> {
    let mut names = Vec::new();
    module.visit("", &mut |n, v| {
        if v.kind == TensorKind::Param {
            names.push(n.to_string());
        }
    });
    names
}
