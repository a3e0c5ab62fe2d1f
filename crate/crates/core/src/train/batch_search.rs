//! Largest batch size whose training step fits in memory, by binary search
//! over a monotone success predicate.

use crate::error::{Error, Result};
use crate::model::EffiSegNet;
use crate::tensor::Tensor;

/// Answers "does one forward + backward step at batch `b` succeed?".
pub trait StepProbe {
    fn try_step(&mut self, batch: usize) -> bool;
}

impl<F: FnMut(usize) -> bool> StepProbe for F {
    fn try_step(&mut self, batch: usize) -> bool {
        self(batch)
    }
}

/// Largest `b ≤ upper_bound` with `probe.try_step(b)`, assuming success is
/// monotone (non-increasing) in `b`. Uses at most `⌈log2(upper_bound + 1)⌉` probes.
pub fn find_max_batch_size(probe: &mut dyn StepProbe, upper_bound: usize) -> Result<usize> {
    if upper_bound == 0 {
        return Err(Error::Contract("batch-size search needs an upper bound ≥ 1".into()));
    }
    // Invariant: `lo` is known to succeed (0 trivially), `hi` known to fail.
    let (mut lo, mut hi) = (0, upper_bound + 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe.try_step(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return Err(Error::Resource("a training step does not fit in memory even at batch size 1".into()));
    }
    Ok(lo)
}

/// Bytes currently available to this process (`MemAvailable` on Linux).
pub fn available_memory() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

/// Probe that measures the activation memory of one sample with a real
/// batch-1 training step and predicts larger batches linearly against a
/// byte budget. A prediction inside the budget is confirmed by reserving
/// the bytes.
#[derive(Debug, Clone)]
pub struct MemoryBudgetProbe {
    fixed_bytes: usize,
    per_sample_bytes: usize,
    budget_bytes: usize,
}

impl MemoryBudgetProbe {
    /// Working-set multiplier on the cached activations: gradients in flight
    /// and im2col scratch roughly double the live footprint.
    const OVERHEAD: usize = 2;

    /// Runs one batch-1 step on a clone of `model` (the original is untouched).
    pub fn measure(model: &EffiSegNet, resolution: usize, budget_bytes: usize) -> Result<Self> {
        let mut probe_model = model.clone();
        let x = Tensor::zeros([1, 3, resolution, resolution]);
        probe_model.forward_train(&x)?;
        let per_sample_bytes = probe_model.cached_bytes() * Self::OVERHEAD;
        // Parameters, gradients and two optimizer moments.
        let fixed_bytes = model.count_parameters().total * 4 * 4;
        Ok(Self { fixed_bytes, per_sample_bytes, budget_bytes })
    }

    pub fn from_parts(fixed_bytes: usize, per_sample_bytes: usize, budget_bytes: usize) -> Self {
        Self { fixed_bytes, per_sample_bytes, budget_bytes }
    }

    pub fn predicted_bytes(&self, batch: usize) -> usize {
        self.fixed_bytes.saturating_add(self.per_sample_bytes.saturating_mul(batch))
    }
}

impl StepProbe for MemoryBudgetProbe {
    fn try_step(&mut self, batch: usize) -> bool {
        let need = self.predicted_bytes(batch);
        if need > self.budget_bytes {
            return false;
        }
        let mut reservation: Vec<u8> = Vec::new();
        reservation.try_reserve_exact(need).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_threshold_with_logarithmic_probes() {
        let mut calls = 0;
        let mut probe = |b: usize| {
            calls += 1;
            b <= 13
        };
        assert_eq!(find_max_batch_size(&mut probe, 64).unwrap(), 13);
        assert!(calls <= 7, "{calls}");
    }

    #[test]
    fn boundaries() {
        assert_eq!(find_max_batch_size(&mut |_| true, 8).unwrap(), 8);
        assert_eq!(find_max_batch_size(&mut |_| true, 1).unwrap(), 1);
        assert!(matches!(find_max_batch_size(&mut |_| false, 64), Err(Error::Resource(_))));
        assert!(find_max_batch_size(&mut |_| true, 0).is_err());
    }

    #[test]
    fn budget_probe_is_linear() {
        let mut p = MemoryBudgetProbe::from_parts(100, 10, 175);
        assert_eq!(find_max_batch_size(&mut p, 64).unwrap(), 7);
    }
}
