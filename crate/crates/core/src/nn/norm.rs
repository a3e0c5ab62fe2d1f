use super::{join, visit_buffer, visit_param, Buffer, Param, Slot, View, Visit};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the newest batch in the running-statistics update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { eps: 1e-5, momentum: 0.1 }
    }
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-channel batch normalization over `N×H×W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cfg: BatchNormConfig,
    cache: Option<Cache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize, cfg: BatchNormConfig) -> Self {
        Self {
            weight: Param::new(vec![channels], vec![T::one(); channels]),
            bias: Param::new(vec![channels], vec![T::zero(); channels]),
            running_mean: Buffer::new(vec![channels], vec![T::zero(); channels]),
            running_var: Buffer::new(vec![channels], vec![T::one(); channels]),
            cfg,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.numel()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode normalization with running statistics, in place.
    pub fn apply(&self, x: &mut Tensor<T>) -> Result<()> {
        self.check(x)?;
        let eps = T::lit(self.cfg.eps);
        for n in 0..x.batch() {
            for c in 0..self.channels() {
                let scale = self.weight.value[c] / (self.running_var.value[c] + eps).sqrt();
                let shift = self.bias.value[c] - self.running_mean.value[c] * scale;
                x.channel_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        self.apply(&mut y)?;
        Ok(y)
    }

    /// Normalizes with batch statistics, updates the running statistics and
    /// caches the normalized input.
    pub fn forward_train(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        self.check(&x)?;
        let [n, c, h, w] = x.shape();
        let count = n * h * w;
        if count < 2 {
            return Err(Error::Shape(format!(
                "batch norm needs more than one value per channel in training, got {:?}",
                x.shape()
            )));
        }
        let momentum = T::lit(self.cfg.momentum);
        let mut inv_std = Vec::with_capacity(c);
        let mut y = Tensor::zeros(x.shape());
        for ci in 0..c {
            let mut sum = 0.0f64;
            for ni in 0..n {
                sum += x.channel(ni, ci).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for ni in 0..n {
                sq += x
                    .channel(ni, ci)
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap_or(f64::NAN) - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let istd = 1.0 / (var + self.cfg.eps).sqrt();
            let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
            let (gamma, beta) = (self.weight.value[ci], self.bias.value[ci]);
            for ni in 0..n {
                let xs = x.channel_mut(ni, ci);
                xs.iter_mut().for_each(|v| *v = (*v - mean_t) * istd_t);
                let xs = x.channel(ni, ci);
                let start = (ni * c + ci) * h * w;
                for (o, &xh) in y.data_mut()[start..start + h * w].iter_mut().zip(xs) {
                    *o = gamma * xh + beta;
                }
            }
            let unbiased = T::lit(sq / (count - 1) as f64);
            let rm = &mut self.running_mean.value[ci];
            *rm = (T::one() - momentum) * *rm + momentum * mean_t;
            let rv = &mut self.running_var.value[ci];
            *rv = (T::one() - momentum) * *rv + momentum * unbiased;
            inv_std.push(istd_t);
        }
        self.cache = Some(Cache { x_hat: x, inv_std });
        Ok(y)
    }

    /// Rebuilds the training-mode output `γ·x̂ + β` from the cache and hands
    /// each (output value, gradient slot) pair to `f`.
    pub(crate) fn for_each_output(&self, grad: &mut Tensor<T>, mut f: impl FnMut(T, &mut T)) -> Result<()> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("batch norm output requested without cached forward".into()))?;
        let [n, c, _, _] = cache.x_hat.shape();
        for ni in 0..n {
            for ci in 0..c {
                let (gamma, beta) = (self.weight.value[ci], self.bias.value[ci]);
                let xs = cache.x_hat.channel(ni, ci);
                for (g, &xh) in grad.channel_mut(ni, ci).iter_mut().zip(xs) {
                    f(gamma * xh + beta, g);
                }
            }
        }
        Ok(())
    }

    /// Consumes the output gradient (reusing its buffer) and returns the input gradient.
    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("batch norm backward without cached forward".into()))?;
        if dy.shape() != cache.x_hat.shape() {
            return Err(Error::Shape(format!(
                "batch norm gradient {:?} does not match {:?}",
                dy.shape(),
                cache.x_hat.shape()
            )));
        }
        let [n, c, h, w] = dy.shape();
        let m = T::from_usize(n * h * w).expect("count fits");
        for ci in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for ni in 0..n {
                for (&g, &xh) in dy.channel(ni, ci).iter().zip(cache.x_hat.channel(ni, ci)) {
                    sum_dy += g;
                    sum_dy_xhat += g * xh;
                }
            }
            self.weight.grad[ci] += sum_dy_xhat;
            self.bias.grad[ci] += sum_dy;
            let k = self.weight.value[ci] * cache.inv_std[ci] / m;
            for ni in 0..n {
                let xs = cache.x_hat.channel(ni, ci);
                for (g, &xh) in dy.channel_mut(ni, ci).iter_mut().zip(xs) {
                    *g = k * (m * *g - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        Ok(dy)
    }

    pub fn cached_bytes(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.x_hat.bytes())
    }
}

impl<T: Real> Visit<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>)) {
        visit_param(prefix, "weight", &self.weight, f);
        visit_param(prefix, "bias", &self.bias, f);
        visit_buffer(prefix, "running_mean", &self.running_mean, f);
        visit_buffer(prefix, "running_var", &self.running_var, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor<f64> {
        Tensor::from_fn([3, 2, 3, 2], |n, c, y, x| ((n * 17 + c * 5 + y * 3 + x) as f64 * 0.61).sin() * (c + 1) as f64)
    }

    #[test]
    fn training_output_is_standardized_per_channel() {
        let mut bn = BatchNorm2d::<f64>::new(2, BatchNormConfig::default());
        let y = bn.forward_train(input()).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.channel(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // Running statistics moved 10% of the way toward the batch statistics.
        assert!(bn.running_mean.value.iter().all(|m| m.abs() < 1.0));
        assert!(bn.running_var.value.iter().all(|&v| v != 1.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = input();
        let mut bn = BatchNorm2d::<f64>::new(2, BatchNormConfig::default());
        bn.weight.value = vec![1.3, -0.7];
        bn.bias.value = vec![0.2, 0.5];
        let r = Tensor::from_fn(x.shape(), |n, c, y, xx| ((n + 3 * c + 5 * y + 7 * xx) as f64 * 0.43).cos());
        let loss = |bn: &BatchNorm2d<f64>, x: &Tensor<f64>| {
            let mut b = bn.clone();
            let y = b.forward_train(x.clone()).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut trained = bn.clone();
        trained.forward_train(x.clone()).unwrap();
        let dx = trained.backward(r.clone()).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "dx[{i}] {fd} vs {}", dx.data()[i]);
        }
        for c in 0..2 {
            let mut p = bn.clone();
            p.weight.value[c] += eps;
            let mut m = bn.clone();
            m.weight.value[c] -= eps;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
            assert!((fd - trained.weight.grad[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::<f64>::new(1, BatchNormConfig::default());
        bn.running_mean.value = vec![2.0];
        bn.running_var.value = vec![4.0 - 1e-5];
        let y = bn.forward(&Tensor::full([1, 1, 1, 2], 4.0)).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
    }
}
