//! Mobile inverted bottleneck (MBConv) with squeeze-and-excitation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    join, silu, sigmoid, Activation, BatchNormConfig, Conv2d, Conv2dConfig, ConvBnAct, Init, Slot, View, Visit,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
struct SeCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    scale: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SqueezeExcite<T: Real> {
    fc1: Conv2d<T>,
    fc2: Conv2d<T>,
    cache: Option<SeCache<T>>,
}

fn channel_means<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    let p = T::from_usize(x.plane()).expect("plane size fits");
    Tensor::from_fn([n, c, 1, 1], |ni, ci, _, _| x.channel(ni, ci).iter().copied().sum::<T>() / p)
}

impl<T: Real> SqueezeExcite<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, squeeze: usize, rng: &mut R) -> Result<Self> {
        let fc1 = Conv2d::new(Conv2dConfig::new(channels, squeeze, 1).with_bias(true), Init::KaimingNormalFanOut, rng)?;
        let fc2 = Conv2d::new(Conv2dConfig::new(squeeze, channels, 1).with_bias(true), Init::KaimingNormalFanOut, rng)?;
        Ok(Self { fc1, fc2, cache: None })
    }

    fn gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(&channel_means(x))?.map(silu);
        Ok(self.fc2.forward(&h)?.map(sigmoid))
    }

    fn scale_input(x: &mut Tensor<T>, scale: &Tensor<T>) {
        for n in 0..x.batch() {
            for c in 0..x.channels() {
                let s = scale.data()[n * x.channels() + c];
                x.channel_mut(n, c).iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let scale = self.gate(x)?;
        let mut out = x.clone();
        Self::scale_input(&mut out, &scale);
        Ok(out)
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let hidden = self.fc1.forward_train(channel_means(&x))?;
        let act = hidden.map(silu);
        let scale = self.fc2.forward_train(act)?.map(sigmoid);
        let mut out = x.clone();
        Self::scale_input(&mut out, &scale);
        self.cache = Some(SeCache { input: x, hidden, scale });
        Ok(out)
    }

    pub fn backward(&mut self, mut grad: Tensor<T>) -> Result<Tensor<T>> {
        let SeCache { input, hidden, scale } = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("squeeze-excite backward without cached forward".into()))?;
        let [n, c, _, _] = input.shape();
        // Gradient w.r.t. the gate pre-activation.
        let dz = Tensor::from_fn([n, c, 1, 1], |ni, ci, _, _| {
            let ds: T = grad.channel(ni, ci).iter().zip(input.channel(ni, ci)).map(|(&g, &x)| g * x).sum();
            let s = scale.data()[ni * c + ci];
            ds * s * (T::one() - s)
        });
        let mut dact = self.fc2.backward(&dz)?;
        for (g, &h) in dact.data_mut().iter_mut().zip(hidden.data()) {
            *g *= Activation::Silu.grad(h);
        }
        let dmean = self.fc1.backward(&dact)?;
        let p = T::from_usize(input.plane()).expect("plane size fits");
        for ni in 0..n {
            for ci in 0..c {
                let s = scale.data()[ni * c + ci];
                let dm = dmean.data()[ni * c + ci] / p;
                grad.channel_mut(ni, ci).iter_mut().for_each(|g| *g = *g * s + dm);
            }
        }
        Ok(grad)
    }

    fn cached_bytes(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.input.bytes())
    }
}

impl<T: Real> Visit<T> for SqueezeExcite<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbConvConfig {
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone)]
pub struct MbConv<T: Real> {
    expand: Option<ConvBnAct<T>>,
    depthwise: ConvBnAct<T>,
    se: SqueezeExcite<T>,
    project: ConvBnAct<T>,
    residual: bool,
}

impl<T: Real> MbConv<T> {
    pub fn new<R: Rng + ?Sized>(cfg: MbConvConfig, bn: BatchNormConfig, rng: &mut R) -> Result<Self> {
        let hidden = cfg.in_channels * cfg.expand_ratio;
        let init = Init::KaimingNormalFanOut;
        let expand = if cfg.expand_ratio != 1 {
            Some(ConvBnAct::new(Conv2dConfig::new(cfg.in_channels, hidden, 1), bn, Activation::Silu, init, rng)?)
        } else {
            None
        };
        let dw = Conv2dConfig::new(hidden, hidden, cfg.kernel).with_stride(cfg.stride).with_groups(hidden);
        let depthwise = ConvBnAct::new(dw, bn, Activation::Silu, init, rng)?;
        let se = SqueezeExcite::new(hidden, (cfg.in_channels / 4).max(1), rng)?;
        let project =
            ConvBnAct::new(Conv2dConfig::new(hidden, cfg.out_channels, 1), bn, Activation::Identity, init, rng)?;
        Ok(Self {
            expand,
            depthwise,
            se,
            project,
            residual: cfg.stride == 1 && cfg.in_channels == cfg.out_channels,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = match &self.expand {
            Some(e) => self.depthwise.forward(&e.forward(x)?)?,
            None => self.depthwise.forward(x)?,
        };
        let mut out = self.project.forward(&self.se.forward(&h)?)?;
        if self.residual {
            out.add_assign(x)?;
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let skip = self.residual.then(|| x.clone());
        let h = match &mut self.expand {
            Some(e) => e.forward_train(x)?,
            None => x,
        };
        let h = self.depthwise.forward_train(h)?;
        let h = self.se.forward_train(h)?;
        let mut out = self.project.forward_train(h)?;
        if let Some(skip) = skip {
            out.add_assign(&skip)?;
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let skip = self.residual.then(|| grad.clone());
        let g = self.project.backward(grad)?;
        let g = self.se.backward(g)?;
        let mut g = self.depthwise.backward(g)?;
        if let Some(e) = &mut self.expand {
            g = e.backward(g)?;
        }
        if let Some(skip) = skip {
            g.add_assign(&skip)?;
        }
        Ok(g)
    }

    pub fn cached_bytes(&self) -> usize {
        self.expand.as_ref().map_or(0, ConvBnAct::cached_bytes)
            + self.depthwise.cached_bytes()
            + self.se.cached_bytes()
            + self.project.cached_bytes()
    }
}

impl<T: Real> Visit<T> for MbConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        let block = join(prefix, "block");
        let mut i = 0;
        if let Some(e) = &self.expand {
            e.visit(&join(&block, "0"), f);
            i = 1;
        }
        self.depthwise.visit(&join(&block, &i.to_string()), f);
        self.se.visit(&join(&block, &(i + 1).to_string()), f);
        self.project.visit(&join(&block, &(i + 2).to_string()), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        let block = join(prefix, "block");
        let mut i = 0;
        if let Some(e) = &mut self.expand {
            e.visit_mut(&join(&block, "0"), f);
            i = 1;
        }
        self.depthwise.visit_mut(&join(&block, &i.to_string()), f);
        self.se.visit_mut(&join(&block, &(i + 1).to_string()), f);
        self.project.visit_mut(&join(&block, &(i + 2).to_string()), f);
    }
}
