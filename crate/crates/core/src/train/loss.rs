//! Soft Dice, binary cross-entropy and their average, with analytic
//! gradients with respect to the predicted probabilities.
//!
//! Sums are accumulated in `f64` regardless of the tensor element type.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[ε, 1 − ε]` inside the logarithms.
pub const BCE_EPS: f64 = 1e-7;
pub const DEFAULT_DICE_SMOOTH: f64 = 1e-6;

fn check<T: Real>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if probs.shape() != target.shape() {
        return Err(Error::Contract(format!(
            "loss: probability shape {:?} does not match target {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Contract("loss: empty batch".into()));
    }
    Ok(())
}

struct DiceTerms {
    inter: f64,
    denom: f64,
}

fn dice_terms<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, n: usize) -> DiceTerms {
    let (p, t) = (probs.sample(n), target.sample(n));
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (&p, &t) in p.iter().zip(t) {
        let (p, t) = (p.to_f64().unwrap_or(f64::NAN), t.to_f64().unwrap_or(f64::NAN));
        inter += p * t;
        sum += p + t;
    }
    DiceTerms { inter, denom: sum }
}

/// Batch mean of `1 − (2Σpt + s)/(Σp + Σt + s)` computed per image.
pub fn dice_loss<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, smooth: f64) -> Result<f64> {
    check(probs, target)?;
    let n = probs.batch();
    let total: f64 = (0..n)
        .map(|i| {
            let d = dice_terms(probs, target, i);
            1.0 - (2.0 * d.inter + smooth) / (d.denom + smooth)
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean over all pixels of `−[t·ln p + (1 − t)·ln(1 − p)]`, `p` clamped to `[ε, 1 − ε]`.
pub fn bce_loss<T: Real>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check(probs, target)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.to_f64().unwrap_or(f64::NAN).clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = t.to_f64().unwrap_or(f64::NAN);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// `(dice_loss + bce_loss) / 2`.
pub fn combined_loss<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, smooth: f64) -> Result<f64> {
    Ok(0.5 * (dice_loss(probs, target, smooth)? + bce_loss(probs, target)?))
}

/// Combined loss and `∂loss/∂probs`.
pub fn combined_loss_grad<T: Real>(probs: &Tensor<T>, target: &Tensor<T>, smooth: f64) -> Result<(f64, Tensor<T>)> {
    check(probs, target)?;
    let n = probs.batch();
    let plane = probs.len() / n;
    let count = probs.len() as f64;
    let mut grad = Tensor::zeros(probs.shape());
    let mut dice_total = 0.0;
    let mut bce_total = 0.0;
    for i in 0..n {
        let d = dice_terms(probs, target, i);
        let num = 2.0 * d.inter + smooth;
        let den = d.denom + smooth;
        dice_total += 1.0 - num / den;
        let (p, t) = (probs.sample(i), target.sample(i));
        let g = &mut grad.data_mut()[i * plane..(i + 1) * plane];
        for ((g, &p), &t) in g.iter_mut().zip(p).zip(t) {
            let (p, t) = (p.to_f64().unwrap_or(f64::NAN), t.to_f64().unwrap_or(f64::NAN));
            // d/dp of 1 − num/den, averaged over the batch.
            let d_dice = -(2.0 * t * den - num) / (den * den) / n as f64;
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            bce_total += -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
            let d_bce = if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) { (-t / pc + (1.0 - t) / (1.0 - pc)) / count } else { 0.0 };
            *g = T::lit(0.5 * (d_dice + d_bce));
        }
    }
    Ok((0.5 * (dice_total / n as f64 + bce_total / count), grad))
}
