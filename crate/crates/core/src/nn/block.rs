use rand::Rng;

use super::{join, BatchNorm2d, BatchNormConfig, Conv2d, Conv2dConfig, Init, Slot, View, Visit};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Silu => silu(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn grad<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => silu_grad(x),
        }
    }
}

/// Bias-free convolution → batch norm → activation.
///
/// Parameter names follow the `<prefix>.0.*` (conv) / `<prefix>.1.*` (norm)
/// layout of the common reference implementations so external weights map
/// one-to-one.
#[derive(Debug, Clone)]
pub struct ConvBnAct<T: Real> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Activation,
}

impl<T: Real> ConvBnAct<T> {
    pub fn new<R: Rng + ?Sized>(
        cfg: Conv2dConfig,
        bn: BatchNormConfig,
        act: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = Conv2d::new(cfg.with_bias(false), init, rng)?;
        Ok(Self { bn: BatchNorm2d::new(cfg.out_channels, bn), conv, act })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.config().out_channels
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.conv.forward(x)?;
        self.bn.apply(&mut y)?;
        if self.act != Activation::Identity {
            let act = self.act;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let z = self.conv.forward_train(x)?;
        let mut y = self.bn.forward_train(z)?;
        if self.act != Activation::Identity {
            let act = self.act;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(y)
    }

    pub fn backward(&mut self, mut grad: Tensor<T>) -> Result<Tensor<T>> {
        if self.act != Activation::Identity {
            let act = self.act;
            self.bn.for_each_output(&mut grad, |pre, g| *g *= act.grad(pre))?;
        }
        let dz = self.bn.backward(grad)?;
        self.conv.backward(&dz)
    }

    pub fn cached_bytes(&self) -> usize {
        self.conv.cached_bytes() + self.bn.cached_bytes()
    }
}

impl<T: Real> Visit<T> for ConvBnAct<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        self.conv.visit(&join(prefix, "0"), f);
        self.bn.visit(&join(prefix, "1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv.visit_mut(&join(prefix, "0"), f);
        self.bn.visit_mut(&join(prefix, "1"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn activation_gradients_match_finite_differences() {
        for act in [Activation::Silu, Activation::Relu, Activation::Identity] {
            for &x in &[-3.1f64, -0.4, 0.3, 2.2] {
                let eps = 1e-6;
                let fd = (act.apply(x + eps) - act.apply(x - eps)) / (2.0 * eps);
                assert!((fd - act.grad(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn conv_bn_act_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = Conv2dConfig::new(3, 4, 3);
        let block = ConvBnAct::<f64>::new(cfg, BatchNormConfig::default(), Activation::Silu, Init::UniformFanIn, &mut rng)
            .unwrap();
        let x = Tensor::from_fn([2, 3, 5, 4], |n, c, y, xx| ((n * 11 + c * 7 + y * 3 + xx) as f64 * 0.53).sin());
        let r = Tensor::from_fn([2, 4, 5, 4], |n, c, y, xx| ((n + 2 * c + 3 * y + 5 * xx) as f64 * 0.29).cos());
        let loss = |b: &ConvBnAct<f64>, x: &Tensor<f64>| {
            let mut b = b.clone();
            let y = b.forward_train(x.clone()).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut trained = block.clone();
        trained.forward_train(x.clone()).unwrap();
        let dx = trained.backward(r.clone()).unwrap();
        let eps = 1e-6;
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&block, &xp) - loss(&block, &xm)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{fd} vs {}", dx.data()[i]);
        }
        for i in (0..block.conv.weight.numel()).step_by(4) {
            let mut p = block.clone();
            p.conv.weight.value[i] += eps;
            let mut m = block.clone();
            m.conv.weight.value[i] -= eps;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((fd - trained.conv.weight.grad[i]).abs() < 1e-6);
        }
    }
}
