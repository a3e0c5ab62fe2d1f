//! Procedural polyp-like dataset: textured mucosa-coloured backgrounds with
//! one or two darker elliptical blobs whose union is the mask.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::index::{IMAGES_DIR, MASKS_DIR};
use super::{Image, Mask, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radial distance; `< 1` inside.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

/// One `size × size` sample drawn from `rng`.
pub fn blob<R: Rng + ?Sized>(id: &str, size: usize, rng: &mut R) -> Sample {
    let s = size as f64;
    let count = rng.random_range(1..=2);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| Ellipse {
            cx: rng.random_range(0.25..0.75) * s,
            cy: rng.random_range(0.25..0.75) * s,
            rx: rng.random_range(0.10..0.25) * s,
            ry: rng.random_range(0.10..0.25) * s,
            angle: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect();
    let base = [rng.random_range(0.75..0.9), rng.random_range(0.45..0.6), rng.random_range(0.4..0.5)];
    let blob_col = [rng.random_range(0.55..0.7), rng.random_range(0.2..0.3), rng.random_range(0.15..0.25)];
    let (fx, fy, phase) = (rng.random_range(2.0..6.0) / s, rng.random_range(2.0..6.0) / s, rng.random_range(0.0..6.28));
    let mut image = Image::new(size, size);
    let mut mask = Mask::new(size, size);
    let n = size * size;
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let texture = 0.06 * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).sin();
            let r = ellipses.iter().map(|e| e.radius(xf, yf)).fold(f64::INFINITY, f64::min);
            let inside = r < 1.0;
            let noise = rng.random_range(-0.03..0.03);
            let i = y * size + x;
            for c in 0..3 {
                let v = if inside {
                    // Slight dome shading towards the blob centre.
                    blob_col[c] + 0.1 * (1.0 - r) + noise
                } else {
                    base[c] + texture + noise
                };
                image.data[c * n + i] = v.clamp(0.0, 1.0) as f32;
            }
            mask.data[i] = u8::from(inside);
        }
    }
    Sample { id: id.to_string(), image, mask }
}

/// `n` samples with ids `synth_0000…`, fully determined by `seed`.
pub fn blobs(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| blob(&format!("synth_{i:04}"), size, &mut rng)).collect()
}

/// Writes samples in the `images/` + `masks/` PNG layout.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for dir in [IMAGES_DIR, MASKS_DIR] {
        std::fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    for s in samples {
        let (w, h) = (s.image.width, s.image.height);
        let n = w * h;
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb(std::array::from_fn(|c| (s.image.data[c * n + i] * 255.0).round() as u8))
        });
        let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([s.mask.get(y as usize, x as usize) * 255]));
        img.save(root.join(IMAGES_DIR).join(format!("{}.png", s.id)))?;
        mask.save(root.join(MASKS_DIR).join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{index_dataset, FolderSource, SampleSource};

    #[test]
    fn blobs_are_seeded_and_have_foreground() {
        let a = blobs(4, 32, 1);
        assert_eq!(a, blobs(4, 32, 1));
        assert_ne!(a, blobs(4, 32, 2));
        for s in &a {
            let fg = s.mask.foreground();
            assert!(fg > 10 && fg < 32 * 32 * 3 / 4, "{fg}");
        }
    }

    #[test]
    fn written_dataset_round_trips_through_the_index() {
        let tmp = tempfile::tempdir().unwrap();
        let samples = blobs(3, 16, 4);
        write_dataset(tmp.path(), &samples).unwrap();
        let source = FolderSource { index: index_dataset(tmp.path()).unwrap() };
        assert_eq!(source.ids(), ["synth_0000", "synth_0001", "synth_0002"]);
        let back = source.load("synth_0001", 16).unwrap();
        assert_eq!(back.mask, samples[1].mask);
        for (a, b) in back.image.data.iter().zip(&samples[1].image.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
