//! Browser demo over the `effisegnet` core, compiled to WebAssembly.
//!
//! Three operations, each backed by the same code the trainer uses:
//!
//! * [`lr_curve`]: the cosine-annealed learning rate for every epoch;
//! * [`augment_preview`]: a synthetic image/mask pair before and after the
//!   paired augmentation pipeline, for a given seed, epoch and config;
//! * [`threshold_view`]: a soft prediction binarized at a threshold, with
//!   the resulting F1 / Dice / IoU / precision / recall.
//!
//! The plain-Rust functions ([`lr_values`], [`preview_rgba`], [`explore`])
//! hold the logic and are tested natively; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use effisegnet::data::{augment, gaussian_blur, sample_rng, synthetic, AugmentationConfig, Image, Mask};
use effisegnet::eval::{confusion_counts, MetricsReport};
use effisegnet::train::lr_at_epoch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Largest canvas side the demo renders.
pub const MAX_SIZE: usize = 512;

fn check_size(size: usize) -> Result<(), String> {
    if !(16..=MAX_SIZE).contains(&size) {
        return Err(format!("size must lie in 16..={MAX_SIZE}, got {size}"));
    }
    Ok(())
}

/// Learning rate for epochs `0..=epochs`.
pub fn lr_values(epochs: usize, lr_initial: f64, lr_final: f64) -> Result<Vec<f64>, String> {
    if epochs == 0 || epochs > 100_000 {
        return Err(format!("epochs must lie in 1..=100000, got {epochs}"));
    }
    (0..=epochs).map(|e| lr_at_epoch(e, epochs, lr_initial, lr_final).map_err(|e| e.to_string())).collect()
}

/// Paints the mask boundary (foreground pixels with a background 4-neighbour).
fn outline(rgba: &mut [u8], mask: &Mask) {
    let (w, h) = (mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || mask.get(y, x - 1) == 0
                || mask.get(y, x + 1) == 0
                || mask.get(y - 1, x) == 0
                || mask.get(y + 1, x) == 0;
            if edge {
                rgba[4 * (y * w + x)..][..3].copy_from_slice(&[255, 230, 0]);
            }
        }
    }
}

/// Places two equally sized RGBA images side by side.
fn side_by_side(left: &[u8], right: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * w * h);
    for y in 0..h {
        out.extend_from_slice(&left[4 * y * w..4 * (y + 1) * w]);
        out.extend_from_slice(&right[4 * y * w..4 * (y + 1) * w]);
    }
    out
}

/// `2·size × size` RGBA: synthetic sample `sample_seed` on the left, the
/// augmented pair for `(aug_seed, epoch)` on the right, masks outlined.
/// An empty `config_json` means the default augmentation.
pub fn preview_rgba(
    sample_seed: u64,
    aug_seed: u64,
    epoch: usize,
    size: usize,
    config_json: &str,
) -> Result<Vec<u8>, String> {
    check_size(size)?;
    let cfg: AugmentationConfig = if config_json.trim().is_empty() {
        AugmentationConfig::default()
    } else {
        serde_json::from_str(config_json).map_err(|e| format!("augmentation config: {e}"))?
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let sample = synthetic::blob("demo", size, &mut ChaCha8Rng::seed_from_u64(sample_seed));
    let (image, mask) = augment(&sample.image, &sample.mask, &cfg, &mut sample_rng(aug_seed, &sample.id, epoch));
    let mut left = sample.image.to_rgba8();
    outline(&mut left, &sample.mask);
    let mut right = image.to_rgba8();
    outline(&mut right, &mask);
    Ok(side_by_side(&left, &right, size, size))
}

/// Default augmentation settings as pretty JSON, for editing in the page.
pub fn default_augmentation() -> String {
    serde_json::to_string_pretty(&AugmentationConfig::default()).unwrap_or_default()
}

/// A binarized prediction: overlay pixels and the metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    /// `size × size` RGBA: true positives green, false positives red,
    /// false negatives blue, over the dimmed image.
    pub rgba: Vec<u8>,
    pub report: MetricsReport,
}

/// Builds a soft prediction from a synthetic ground truth (blurred by
/// `blur` pixels, plus uniform noise of amplitude `noise`) and scores it at
/// `threshold`.
pub fn explore(seed: u64, size: usize, blur: f64, noise: f64, threshold: f64) -> Result<Exploration, String> {
    check_size(size)?;
    if !(0.0..=1.0).contains(&threshold) || !(0.0..=1.0).contains(&noise) || !(0.0..=64.0).contains(&blur) {
        return Err("threshold and noise must lie in [0, 1], blur in [0, 64]".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = synthetic::blob("demo", size, &mut rng);
    let gt: Vec<f64> = sample.mask.data.iter().map(|&v| f64::from(v)).collect();
    let probs: Vec<f64> = gaussian_blur(&gt, (size, size), blur)
        .into_iter()
        .map(|p| (p + noise * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0))
        .collect();
    let counts = confusion_counts(&probs, &gt, threshold).map_err(|e| e.to_string())?;
    let report = MetricsReport::from_counts("demo", threshold, vec![(sample.id.clone(), counts)])
        .map_err(|e| e.to_string())?;
    let mut rgba = dimmed(&sample.image);
    for (i, (&p, &g)) in probs.iter().zip(&gt).enumerate() {
        let colour = match (p >= threshold, g >= 0.5) {
            (true, true) => Some([40, 200, 80]),
            (true, false) => Some([230, 50, 50]),
            (false, true) => Some([60, 110, 240]),
            (false, false) => None,
        };
        if let Some(c) = colour {
            rgba[4 * i..][..3].copy_from_slice(&c);
        }
    }
    Ok(Exploration { rgba, report })
}

fn dimmed(image: &Image) -> Vec<u8> {
    let mut rgba = image.to_rgba8();
    for px in rgba.chunks_exact_mut(4) {
        for v in &mut px[..3] {
            *v /= 3;
        }
    }
    rgba
}

// ---------------------------------------------------------------------------
// JavaScript bindings
// ---------------------------------------------------------------------------

/// Learning rate per epoch `0..=epochs` as a `Float64Array`.
#[wasm_bindgen]
pub fn lr_curve(epochs: usize, lr_initial: f64, lr_final: f64) -> Result<Vec<f64>, JsError> {
    lr_values(epochs, lr_initial, lr_final).map_err(|e| JsError::new(&e))
}

/// `2·size × size` RGBA bytes (original | augmented).
#[wasm_bindgen]
pub fn augment_preview(
    sample_seed: u64,
    aug_seed: u64,
    epoch: usize,
    size: usize,
    config_json: &str,
) -> Result<Vec<u8>, JsError> {
    preview_rgba(sample_seed, aug_seed, epoch, size, config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn default_augmentation_json() -> String {
    default_augmentation()
}

#[wasm_bindgen]
pub struct ThresholdView {
    inner: Exploration,
}

#[wasm_bindgen]
impl ThresholdView {
    /// `size × size` RGBA overlay.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.inner.rgba.clone()
    }

    /// Metric report as JSON (`f1`, `mdice`, `miou`, `precision`, `recall`, counts).
    #[wasm_bindgen(getter)]
    pub fn metrics_json(&self) -> String {
        serde_json::to_string(&self.inner.report).unwrap_or_default()
    }
}

#[wasm_bindgen]
pub fn threshold_view(seed: u64, size: usize, blur: f64, noise: f64, threshold: f64) -> Result<ThresholdView, JsError> {
    explore(seed, size, blur, noise, threshold).map(|inner| ThresholdView { inner }).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_curve_endpoints_and_length() {
        let v = lr_values(10, 1e-4, 1e-5).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!((v[0], v[10]), (1e-4, 1e-5));
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
        assert!(lr_values(0, 1e-4, 1e-5).is_err());
    }

    #[test]
    fn preview_is_deterministic_and_sized() {
        let a = preview_rgba(1, 2, 3, 32, "").unwrap();
        assert_eq!(a.len(), 2 * 32 * 32 * 4);
        assert_eq!(a, preview_rgba(1, 2, 3, 32, "").unwrap());
        assert_ne!(a, preview_rgba(1, 2, 4, 32, "").unwrap());
        // Identity augmentation leaves both halves equal.
        let id = serde_json::to_string(&AugmentationConfig::identity()).unwrap();
        let b = preview_rgba(1, 2, 3, 32, &id).unwrap();
        for y in 0..32 {
            assert_eq!(b[y * 256..y * 256 + 128], b[y * 256 + 128..(y + 1) * 256]);
        }
        assert!(preview_rgba(1, 2, 3, 32, "{\"nope\": 1}").unwrap_err().contains("nope"));
        assert!(preview_rgba(1, 2, 3, 8, "").is_err());
    }

    #[test]
    fn exploration_metrics_follow_threshold() {
        // No blur and no noise: the prediction equals the ground truth.
        let exact = explore(5, 48, 0.0, 0.0, 0.5).unwrap().report;
        assert_eq!((exact.f1, exact.mdice, exact.miou), (1.0, 1.0, 1.0));
        // Threshold 0 marks everything foreground: recall 1, precision = prevalence.
        let all = explore(5, 48, 2.0, 0.1, 0.0).unwrap().report;
        assert_eq!(all.recall, 1.0);
        let c = all.aggregate_counts;
        assert_eq!(all.precision, c.tp as f64 / c.total() as f64);
        assert!(explore(5, 48, 2.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn default_augmentation_round_trips() {
        let parsed: AugmentationConfig = serde_json::from_str(&default_augmentation()).unwrap();
        assert_eq!(parsed, AugmentationConfig::default());
    }
}
