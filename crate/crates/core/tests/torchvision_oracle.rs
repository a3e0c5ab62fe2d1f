//! Architecture equivalence with the torchvision EfficientNet backbones.
//!
//! `fixtures/torchvision_taps.json` was produced by
//! `tools/torchvision_taps.py`: every backbone tensor is filled with a
//! closed-form function of its name and index, the torchvision model runs
//! in float64 on a closed-form input, and the five stage outputs are
//! summarized. Rebuilding the same weights by name here and matching the
//! summaries checks tensor naming, block wiring, strides, padding, SE,
//! activations, batch-norm settings and the stage taps in one go.

use effisegnet::backbone::{Encoder, Variant, VariantConfig};
use effisegnet::nn::{Slot, Visit};
use effisegnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Tap {
    shape: Vec<usize>,
    sum: f64,
    abs_sum: f64,
    sq_sum: f64,
    stride: usize,
    samples: Vec<f64>,
}

#[derive(Deserialize)]
struct Reference {
    resolution: usize,
    taps: Vec<Tap>,
}

fn fixture(variant: &str) -> Reference {
    let text = include_str!("fixtures/torchvision_taps.json");
    let all: serde_json::Value = serde_json::from_str(text).unwrap();
    serde_json::from_value(all[variant].clone()).unwrap()
}

/// Same closed form as the generator script.
fn fill(name: &str, shape: &[usize], out: &mut [f64]) {
    let offset = (name.bytes().map(u64::from).sum::<u64>() % 1000) as f64 * 1e-3;
    let n: usize = shape.iter().product();
    for (i, v) in out.iter_mut().enumerate() {
        let s = (0.37 * i as f64 + offset).sin();
        *v = if shape.len() == 4 {
            s / ((n / shape[0]) as f64).sqrt()
        } else if name.ends_with("running_var") {
            1.0 + 0.5 * s.abs()
        } else if name.ends_with("weight") {
            1.0 + 0.1 * s
        } else {
            0.1 * s
        };
    }
}

fn check_variant(variant: Variant, key: &str) {
    let reference = fixture(key);
    let r = reference.resolution;
    let config = VariantConfig::new(variant).with_resolution(r);
    let mut encoder = Encoder::<f64>::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut filled = 0;
    encoder.visit_mut("", &mut |name, mut slot: Slot<'_, f64>| {
        let shape = slot.shape().to_vec();
        fill(name, &shape, slot.value_mut());
        filled += 1;
    });
    assert!(filled > 100);
    let x = Tensor::from_fn([1, 3, r, r], |_, c, y, x| (0.05 * (31 * c + 7 * y + 3 * x) as f64).sin());
    let pyramid = encoder.encode_stages(&x).unwrap();
    assert_eq!(pyramid.stages.len(), reference.taps.len());
    for (s, (got, want)) in pyramid.stages.iter().zip(&reference.taps).enumerate() {
        assert_eq!(got.shape().to_vec(), want.shape, "{key} stage {}", s + 1);
        let d = got.data();
        let tol = 1e-9 * want.abs_sum.max(1.0);
        let sum: f64 = d.iter().sum();
        let abs_sum: f64 = d.iter().map(|v| v.abs()).sum();
        let sq_sum: f64 = d.iter().map(|v| v * v).sum();
        assert!((sum - want.sum).abs() < tol, "{key} stage {}: sum {sum} vs {}", s + 1, want.sum);
        assert!((abs_sum - want.abs_sum).abs() < tol, "{key} stage {}: |sum| {abs_sum} vs {}", s + 1, want.abs_sum);
        assert!((sq_sum - want.sq_sum).abs() < 1e-9 * want.sq_sum.max(1.0), "{key} stage {}: sq", s + 1);
        for (k, &w) in want.samples.iter().enumerate() {
            let g = d[k * want.stride];
            assert!((g - w).abs() < 1e-10 * w.abs().max(1.0), "{key} stage {} sample {k}: {g} vs {w}", s + 1);
        }
    }
}

#[test]
fn b0_stage_taps_match_torchvision() {
    check_variant(Variant::B0, "b0");
}

#[test]
fn b5_stage_taps_match_torchvision() {
    check_variant(Variant::B5, "b5");
}
