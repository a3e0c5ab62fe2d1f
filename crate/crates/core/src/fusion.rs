//! Full-scale additive decoder.
//!
//! Every stage map (and the raw input as stage 0) is projected to a common
//! width by a conv + batch-norm, brought to input resolution with
//! nearest-neighbour upsampling, and summed:
//!
//! ```text
//! fused = F0(x0) + Σ_{s=1..5} up(Fs(xs))
//! ```
//!
//! The fused map is refined by two Ghost modules and reduced to a single
//! foreground-probability channel by a 1×1 convolution and a sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{StagePyramid, VariantConfig, DEPTH};
use crate::error::{Error, Result};
use crate::nn::{join, sigmoid, Activation, BatchNormConfig, Conv2d, Conv2dConfig, ConvBnAct, Init, Slot, View, Visit};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionHeadConfig {
    pub fusion_channels: usize,
    pub projection_kernel: usize,
    pub upsample_mode: UpsampleMode,
    pub ghost_ratio: usize,
    pub ghost_kernel_primary: usize,
    pub ghost_kernel_cheap: usize,
}

impl Default for FusionHeadConfig {
    fn default() -> Self {
        Self {
            fusion_channels: 32,
            projection_kernel: 3,
            upsample_mode: UpsampleMode::Nearest,
            ghost_ratio: 2,
            ghost_kernel_primary: 1,
            ghost_kernel_cheap: 3,
        }
    }
}

impl FusionHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fusion_channels == 0 {
            return Err(Error::Config("fusion_channels must be positive".into()));
        }
        for (name, k) in [
            ("projection_kernel", self.projection_kernel),
            ("ghost_kernel_primary", self.ghost_kernel_primary),
            ("ghost_kernel_cheap", self.ghost_kernel_cheap),
        ] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.ghost_ratio < 2 || self.fusion_channels % self.ghost_ratio != 0 {
            return Err(Error::Config(format!(
                "fusion_channels {} is not divisible by ghost_ratio {} (ratio must be ≥ 2)",
                self.fusion_channels, self.ghost_ratio
            )));
        }
        Ok(())
    }
}

/// Nearest-neighbour source index for output coordinate `o`: `⌊o·src/dst⌋`.
#[inline]
fn nearest(o: usize, src: usize, dst: usize) -> usize {
    o * src / dst
}

fn check_upsample<T: Real>(map: &Tensor<T>, (th, tw): (usize, usize)) -> Result<()> {
    if th < map.height() || tw < map.width() {
        return Err(Error::Contract(format!(
            "upsample target {th}×{tw} is smaller than source {}×{}",
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

/// Nearest-neighbour upsampling to exactly `target`.
pub fn upsample_to_input<T: Real>(map: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    check_upsample(map, target)?;
    let [n, c, _, _] = map.shape();
    let mut out = Tensor::zeros([n, c, target.0, target.1]);
    upsample_add(&mut out, map)?;
    Ok(out)
}

/// `acc += up(map)` without materializing the upsampled tensor.
fn upsample_add<T: Real>(acc: &mut Tensor<T>, map: &Tensor<T>) -> Result<()> {
    let [n, c, th, tw] = acc.shape();
    let [mn, mc, h, w] = map.shape();
    if mn != n || mc != c {
        return Err(Error::Shape(format!("cannot add upsampled {:?} into {:?}", map.shape(), acc.shape())));
    }
    check_upsample(map, (th, tw))?;
    let cols: Vec<usize> = (0..tw).map(|x| nearest(x, w, tw)).collect();
    for ni in 0..n {
        for ci in 0..c {
            let src = map.channel(ni, ci);
            let dst = acc.channel_mut(ni, ci);
            for y in 0..th {
                let row = &src[nearest(y, h, th) * w..][..w];
                for (d, &sx) in dst[y * tw..(y + 1) * tw].iter_mut().zip(&cols) {
                    *d += row[sx];
                }
            }
        }
    }
    Ok(())
}

/// Adjoint of [`upsample_to_input`]: sums each source pixel's footprint.
fn upsample_adjoint<T: Real>(grad: &Tensor<T>, (h, w): (usize, usize)) -> Tensor<T> {
    let [n, c, th, tw] = grad.shape();
    let cols: Vec<usize> = (0..tw).map(|x| nearest(x, w, tw)).collect();
    let mut out = Tensor::zeros([n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = grad.channel(ni, ci);
            let dst = out.channel_mut(ni, ci);
            for y in 0..th {
                let row = &mut dst[nearest(y, h, th) * w..][..w];
                for (&gv, &sx) in g[y * tw..(y + 1) * tw].iter().zip(&cols) {
                    row[sx] += gv;
                }
            }
        }
    }
    out
}

/// `N × fusion_channels × H × W` sum of all projected stages at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap<T = f32>(pub Tensor<T>);

#[derive(Debug, Clone)]
pub struct GhostModule<T: Real> {
    primary: ConvBnAct<T>,
    cheap: ConvBnAct<T>,
    intrinsic: usize,
}

impl<T: Real> GhostModule<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, cfg: &FusionHeadConfig, rng: &mut R) -> Result<Self> {
        if cfg.ghost_ratio < 2 || channels % cfg.ghost_ratio != 0 {
            return Err(Error::Config(format!(
                "ghost module width {channels} is not divisible by ratio {}",
                cfg.ghost_ratio
            )));
        }
        let intrinsic = channels / cfg.ghost_ratio;
        let cheap_out = channels - intrinsic;
        let bn = BatchNormConfig::default();
        let init = Init::UniformFanIn;
        let primary = ConvBnAct::new(
            Conv2dConfig::new(channels, intrinsic, cfg.ghost_kernel_primary),
            bn,
            Activation::Relu,
            init,
            rng,
        )?;
        let cheap = ConvBnAct::new(
            Conv2dConfig::new(intrinsic, cheap_out, cfg.ghost_kernel_cheap).with_groups(intrinsic),
            bn,
            Activation::Relu,
            init,
            rng,
        )?;
        Ok(Self { primary, cheap, intrinsic })
    }

    pub fn intrinsic_channels(&self) -> usize {
        self.intrinsic
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.primary.forward(x)?;
        let c = self.cheap.forward(&p)?;
        Tensor::cat_channels(&p, &c)
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let p = self.primary.forward_train(x)?;
        let c = self.cheap.forward_train(p.clone())?;
        Tensor::cat_channels(&p, &c)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let c = grad.channels();
        let mut dp = grad.narrow_channels(0, self.intrinsic);
        let dc = grad.narrow_channels(self.intrinsic, c - self.intrinsic);
        dp.add_assign(&self.cheap.backward(dc)?)?;
        self.primary.backward(dp)
    }

    fn cached_bytes(&self) -> usize {
        self.primary.cached_bytes() + self.cheap.cached_bytes()
    }
}

impl<T: Real> Visit<T> for GhostModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        self.primary.visit(&join(prefix, "primary"), f);
        self.cheap.visit(&join(prefix, "cheap"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.primary.visit_mut(&join(prefix, "primary"), f);
        self.cheap.visit_mut(&join(prefix, "cheap"), f);
    }
}

/// Projections F0..F5, the two Ghost modules and the sigmoid output layer.
#[derive(Debug, Clone)]
pub struct FusionHead<T: Real = f32> {
    cfg: FusionHeadConfig,
    stage_channels: [usize; DEPTH],
    projections: Vec<ConvBnAct<T>>,
    ghost1: GhostModule<T>,
    ghost2: GhostModule<T>,
    output: Conv2d<T>,
    probs: Option<Tensor<T>>,
    stage_sizes: Vec<(usize, usize)>,
}

impl<T: Real> FusionHead<T> {
    pub fn new<R: Rng + ?Sized>(cfg: FusionHeadConfig, stage_channels: [usize; DEPTH], rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.fusion_channels;
        let bn = BatchNormConfig::default();
        let mut projections = Vec::with_capacity(DEPTH + 1);
        for c_in in std::iter::once(3).chain(stage_channels) {
            projections.push(ConvBnAct::new(
                Conv2dConfig::new(c_in, width, cfg.projection_kernel),
                bn,
                Activation::Identity,
                Init::UniformFanIn,
                rng,
            )?);
        }
        let ghost1 = GhostModule::new(width, &cfg, rng)?;
        let ghost2 = GhostModule::new(width, &cfg, rng)?;
        let output = Conv2d::new(Conv2dConfig::new(width, 1, 1).with_bias(true), Init::UniformFanIn, rng)?;
        Ok(Self { cfg, stage_channels, projections, ghost1, ghost2, output, probs: None, stage_sizes: Vec::new() })
    }

    pub fn for_variant<R: Rng + ?Sized>(cfg: FusionHeadConfig, variant: &VariantConfig, rng: &mut R) -> Result<Self> {
        Self::new(cfg, variant.stage_channels, rng)
    }

    pub fn config(&self) -> &FusionHeadConfig {
        &self.cfg
    }

    pub fn projection(&self, stage: usize) -> Option<&ConvBnAct<T>> {
        self.projections.get(stage)
    }

    pub fn projection_mut(&mut self, stage: usize) -> Option<&mut ConvBnAct<T>> {
        self.projections.get_mut(stage)
    }

    pub fn ghost_modules(&self) -> [&GhostModule<T>; 2] {
        [&self.ghost1, &self.ghost2]
    }

    fn check_stage(&self, map: &Tensor<T>, stage: usize) -> Result<()> {
        let want = if stage == 0 {
            3
        } else {
            *self.stage_channels.get(stage - 1).ok_or_else(|| Error::Contract(format!("no stage {stage}")))?
        };
        if map.channels() != want {
            return Err(Error::Shape(format!(
                "stage {stage} expects {want} channels, got {:?}",
                map.shape()
            )));
        }
        Ok(())
    }

    /// `F_s(map)`: conv + batch norm to the fusion width at unchanged resolution.
    pub fn project_stage(&self, map: &Tensor<T>, stage: usize) -> Result<Tensor<T>> {
        self.check_stage(map, stage)?;
        self.projections[stage].forward(map)
    }

    fn check_pyramid(&self, pyramid: &StagePyramid<T>) -> Result<()> {
        if pyramid.depth() != DEPTH {
            return Err(Error::Contract(format!(
                "pyramid has {} stages, expected {DEPTH}",
                pyramid.depth()
            )));
        }
        self.check_stage(&pyramid.stage0_input, 0)?;
        for (s, map) in pyramid.stages.iter().enumerate() {
            self.check_stage(map, s + 1)?;
        }
        Ok(())
    }

    pub fn fuse_full_scale(&self, pyramid: &StagePyramid<T>) -> Result<FusedMap<T>> {
        self.check_pyramid(pyramid)?;
        let mut acc = self.projections[0].forward(&pyramid.stage0_input)?;
        for (proj, map) in self.projections[1..].iter().zip(&pyramid.stages) {
            upsample_add(&mut acc, &proj.forward(map)?)?;
        }
        Ok(FusedMap(acc))
    }

    /// Ghost modules, 1×1 conv and sigmoid on a fused map.
    pub fn refine(&self, fused: &FusedMap<T>) -> Result<Tensor<T>> {
        let h = self.ghost2.forward(&self.ghost1.forward(&fused.0)?)?;
        Ok(self.output.forward(&h)?.map(sigmoid))
    }

    pub fn forward(&self, pyramid: &StagePyramid<T>) -> Result<Tensor<T>> {
        self.refine(&self.fuse_full_scale(pyramid)?)
    }

    pub fn forward_train(&mut self, pyramid: StagePyramid<T>) -> Result<Tensor<T>> {
        self.check_pyramid(&pyramid)?;
        let StagePyramid { stage0_input, stages } = pyramid;
        self.stage_sizes = stages.iter().map(|m| (m.height(), m.width())).collect();
        let mut acc = self.projections[0].forward_train(stage0_input)?;
        for (proj, map) in self.projections[1..].iter_mut().zip(stages) {
            upsample_add(&mut acc, &proj.forward_train(map)?)?;
        }
        let h = self.ghost1.forward_train(acc)?;
        let h = self.ghost2.forward_train(h)?;
        let probs = self.output.forward_train(h)?.map(sigmoid);
        self.probs = Some(probs.clone());
        Ok(probs)
    }

    /// Takes `∂L/∂probs` and returns the gradients for the five encoder stages.
    pub fn backward(&mut self, dprobs: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let probs = self
            .probs
            .take()
            .ok_or_else(|| Error::Contract("fusion head backward without cached forward".into()))?;
        if probs.shape() != dprobs.shape() {
            return Err(Error::Shape(format!("gradient {:?} does not match output {:?}", dprobs.shape(), probs.shape())));
        }
        let mut dz = dprobs.clone();
        for (g, &p) in dz.data_mut().iter_mut().zip(probs.data()) {
            *g *= p * (T::one() - p);
        }
        let g = self.output.backward(&dz)?;
        let g = self.ghost2.backward(g)?;
        let dfused = self.ghost1.backward(g)?;
        let mut stage_grads = Vec::with_capacity(DEPTH);
        for (proj, &size) in self.projections[1..].iter_mut().zip(&self.stage_sizes) {
            stage_grads.push(proj.backward(upsample_adjoint(&dfused, size))?);
        }
        self.projections[0].backward(dfused)?;
        Ok(stage_grads)
    }

    pub fn cached_bytes(&self) -> usize {
        self.projections.iter().map(ConvBnAct::cached_bytes).sum::<usize>()
            + self.ghost1.cached_bytes()
            + self.ghost2.cached_bytes()
            + self.output.cached_bytes()
            + self.probs.as_ref().map_or(0, Tensor::bytes)
    }
}

impl<T: Real> Visit<T> for FusionHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        for (s, p) in self.projections.iter().enumerate() {
            p.visit(&format!("{}.{s}", join(prefix, "projections")), f);
        }
        self.ghost1.visit(&join(prefix, "ghost1"), f);
        self.ghost2.visit(&join(prefix, "ghost2"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        for (s, p) in self.projections.iter_mut().enumerate() {
            p.visit_mut(&format!("{}.{s}", join(prefix, "projections")), f);
        }
        self.ghost1.visit_mut(&join(prefix, "ghost1"), f);
        self.ghost2.visit_mut(&join(prefix, "ghost2"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn nearest_upsample_examples() {
        let m = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample_to_input(&m, (4, 4)).unwrap();
        assert_eq!(
            up.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert_eq!(upsample_to_input(&m, (2, 2)).unwrap(), m);
        let seven = Tensor::<f32>::from_fn([1, 2, 7, 7], |_, c, y, x| (c * 100 + y * 10 + x) as f32);
        let big = upsample_to_input(&seven, (224, 224)).unwrap();
        for (y, x) in [(0, 0), (31, 32), (100, 223), (223, 5)] {
            assert_eq!(big.at(0, 1, y, x), seven.at(0, 1, y * 7 / 224, x * 7 / 224));
        }
        assert!(matches!(upsample_to_input(&m, (1, 4)), Err(Error::Contract(_))));
    }

    #[test]
    fn upsample_adjoint_is_transpose() {
        // <up(a), b> == <a, up*(b)> for odd, non-dividing sizes.
        let a = Tensor::<f64>::from_fn([2, 3, 5, 4], |n, c, y, x| ((n * 7 + c * 5 + y * 3 + x) as f64).sin());
        let b = Tensor::<f64>::from_fn([2, 3, 13, 11], |n, c, y, x| ((n + 2 * c + 3 * y + 5 * x) as f64 * 0.3).cos());
        let lhs: f64 = upsample_to_input(&a, (13, 11)).unwrap().data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.data().iter().zip(upsample_adjoint(&b, (5, 4)).data()).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(FusionHeadConfig::default().validate().is_ok());
        let odd = FusionHeadConfig { fusion_channels: 33, ..Default::default() };
        assert!(matches!(odd.validate(), Err(Error::Config(_))));
        let even_kernel = FusionHeadConfig { projection_kernel: 2, ..Default::default() };
        assert!(even_kernel.validate().is_err());
    }

    #[test]
    fn ghost_module_shapes_and_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = FusionHeadConfig::default();
        let g = GhostModule::<f32>::new(32, &cfg, &mut rng).unwrap();
        assert_eq!(g.intrinsic_channels(), 16);
        let y = g.forward(&Tensor::full([1, 32, 9, 7], 0.3)).unwrap();
        assert_eq!(y.shape(), [1, 32, 9, 7]);
        let weights = g.primary.conv.weight.numel() + g.cheap.conv.weight.numel();
        assert!(weights < 32 * 32 * 9, "{weights}");
        let bad = GhostModule::<f32>::new(30, &FusionHeadConfig { ghost_ratio: 4, ..cfg }, &mut rng);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn ghost_module_constant_input_gives_constant_interior_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GhostModule::<f64>::new(32, &FusionHeadConfig::default(), &mut rng).unwrap();
        let y = g.forward(&Tensor::zeros([1, 32, 6, 6])).unwrap();
        // Primary channels are 1×1 convs: constant everywhere. Cheap channels
        // see zero padding at the border, so compare interior positions.
        for c in 0..32 {
            let plane = y.channel(0, c);
            let interior: Vec<f64> = (1..5).flat_map(|yy| (1..5).map(move |x| plane[yy * 6 + x])).collect();
            assert!(interior.iter().all(|&v| v == interior[0]), "channel {c}");
            if c < 16 {
                assert!(plane.iter().all(|&v| v == plane[0]));
            }
        }
    }
}
