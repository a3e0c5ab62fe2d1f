use serde::{Deserialize, Serialize};

use crate::nn::{Slot, Visit};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam with decoupled weight decay: each step first shrinks every weight
/// by `(1 − lr·wd)`, then applies the bias-corrected Adam update.
///
/// Moment buffers are matched to parameters by traversal order.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    cfg: AdamWConfig,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<M: Visit<T> + ?Sized>(&mut self, model: &mut M, lr: f64) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let mut index = 0;
        let moments = &mut self.moments;
        model.visit_mut("", &mut |_, slot| {
            let Slot::Param(p) = slot else { return };
            if moments.len() == index {
                moments.push((vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]));
            }
            let (m, v) = &mut moments[index];
            index += 1;
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w = *w * decay;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w = *w - step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        });
    }
}
