//! Paired image/mask augmentation: flips → colour jitter → affine → elastic.
//!
//! Geometric transforms are backward warps shared by image and mask; the
//! image is resampled with a Lanczos-3 (or bilinear) kernel, the mask with
//! nearest-neighbour so it stays binary. Out-of-frame pixels become zero
//! (image) and background (mask). A parameter at its identity value skips the
//! corresponding transform entirely, so an identity configuration returns
//! the input unchanged.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Image, Mask};
use crate::error::{Error, Result};

/// Resampling kernel for image warps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Lanczos,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Master switch; when false, training samples are only resized and normalized.
    pub enabled: bool,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Brightness multiplier range.
    pub brightness_range: [f64; 2],
    /// Contrast multiplier drawn from `[1 − f, 1 + f]`.
    pub contrast_factor: f64,
    /// Saturation multiplier drawn from `[1 − f, 1 + f]`.
    pub saturation_factor: f64,
    /// Hue shift drawn from `[−f, f]`, in turns of the hue circle.
    pub hue_factor: f64,
    pub affine_scale_range: [f64; 2],
    /// Maximum translation as a fraction of width (x) and height (y).
    pub affine_translate_frac: f64,
    /// Rotation range in degrees (counter-clockwise positive).
    pub affine_rotate_deg: [f64; 2],
    /// Gaussian smoothing of the elastic displacement noise, in pixels.
    pub elastic_sigma: f64,
    /// Displacement magnitude multiplier.
    pub elastic_alpha: f64,
    pub elastic_interpolation: Interpolation,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            brightness_range: [0.6, 1.6],
            contrast_factor: 0.2,
            saturation_factor: 0.1,
            hue_factor: 0.01,
            affine_scale_range: [0.5, 1.5],
            affine_translate_frac: 0.125,
            affine_rotate_deg: [-90.0, 90.0],
            elastic_sigma: 50.0,
            elastic_alpha: 1.0,
            elastic_interpolation: Interpolation::Lanczos,
        }
    }
}

impl AugmentationConfig {
    /// Every transform at its identity value.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            brightness_range: [1.0, 1.0],
            contrast_factor: 0.0,
            saturation_factor: 0.0,
            hue_factor: 0.0,
            affine_scale_range: [1.0, 1.0],
            affine_translate_frac: 0.0,
            affine_rotate_deg: [0.0, 0.0],
            elastic_sigma: 50.0,
            elastic_alpha: 0.0,
            elastic_interpolation: Interpolation::Lanczos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("augmentation: {what}")));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} = {p} is not a probability"));
            }
        }
        if !ordered(self.brightness_range) || self.brightness_range[0] < 0.0 {
            return bad("brightness_range must be an ordered non-negative range");
        }
        for (name, f, max) in [
            ("contrast_factor", self.contrast_factor, 1.0),
            ("saturation_factor", self.saturation_factor, 1.0),
            ("hue_factor", self.hue_factor, 0.5),
        ] {
            if !(0.0..=max).contains(&f) {
                return bad(&format!("{name} = {f} outside [0, {max}]"));
            }
        }
        if !ordered(self.affine_scale_range) || self.affine_scale_range[0] <= 0.0 {
            return bad("affine_scale_range must be an ordered positive range");
        }
        if !(0.0..=1.0).contains(&self.affine_translate_frac) {
            return bad("affine_translate_frac outside [0, 1]");
        }
        if !ordered(self.affine_rotate_deg) {
            return bad("affine_rotate_deg must be an ordered range");
        }
        if !(self.elastic_sigma >= 0.0 && self.elastic_alpha >= 0.0) {
            return bad("elastic_sigma and elastic_alpha must be non-negative");
        }
        Ok(())
    }
}

/// Independent random stream for one sample in one epoch, so results do not
/// depend on worker count or processing order.
pub fn sample_rng(seed: u64, id: &str, epoch: usize) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("{seed}:{id}:{epoch}").as_bytes());
    ChaCha8Rng::from_seed(digest.into())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    // Always consume one draw so the stream layout does not depend on the ranges.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Parameters of one affine draw, in output pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub angle_deg: f64,
    pub scale: f64,
    pub translate: (f64, f64),
}

impl AffineDraw {
    pub const IDENTITY: AffineDraw = AffineDraw { angle_deg: 0.0, scale: 1.0, translate: (0.0, 0.0) };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Source coordinate of output pixel `(x, y)` (pixel centres, origin at
    /// the top-left pixel). The forward map is
    /// `p' = c + t + s·R(θ)(p − c)` with `R` rotating counter-clockwise on screen.
    pub fn inverse(&self, (w, h): (usize, usize)) -> impl Fn(f64, f64) -> (f64, f64) {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (tx, ty) = self.translate;
        let s = self.scale;
        move |x, y| {
            let (dx, dy) = ((x - cx - tx) / s, (y - cy - ty) / s);
            // R(θ)ᵀ = R(−θ)
            (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Draw {
    hflip: bool,
    vflip: bool,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
    affine: AffineDraw,
}

fn draw<R: Rng + ?Sized>(cfg: &AugmentationConfig, (w, h): (usize, usize), rng: &mut R) -> Draw {
    let hflip = rng.random::<f64>() < cfg.hflip_prob;
    let vflip = rng.random::<f64>() < cfg.vflip_prob;
    let brightness = uniform(rng, cfg.brightness_range);
    let contrast = uniform(rng, [1.0 - cfg.contrast_factor, 1.0 + cfg.contrast_factor]);
    let saturation = uniform(rng, [1.0 - cfg.saturation_factor, 1.0 + cfg.saturation_factor]);
    let hue = uniform(rng, [-cfg.hue_factor, cfg.hue_factor]);
    let angle_deg = uniform(rng, cfg.affine_rotate_deg);
    let scale = uniform(rng, cfg.affine_scale_range);
    let (mx, my) = (cfg.affine_translate_frac * w as f64, cfg.affine_translate_frac * h as f64);
    let tx = uniform(rng, [-mx, mx]).round() + 0.0;
    let ty = uniform(rng, [-my, my]).round() + 0.0;
    Draw { hflip, vflip, brightness, contrast, saturation, hue, affine: AffineDraw { angle_deg, scale, translate: (tx, ty) } }
}

/// Applies one random draw of the augmentation stack. Geometry is shared by
/// image and mask; colour jitter touches the image only.
pub fn augment<R: Rng + ?Sized>(image: &Image, mask: &Mask, cfg: &AugmentationConfig, rng: &mut R) -> (Image, Mask) {
    assert_eq!((image.width, image.height), (mask.width, mask.height), "image and mask sizes differ");
    if !cfg.enabled {
        return (image.clone(), mask.clone());
    }
    let size = (image.width, image.height);
    let d = draw(cfg, size, rng);
    let (mut img, mut m) = (image.clone(), mask.clone());
    if d.hflip {
        flip_horizontal(&mut img, &mut m);
    }
    if d.vflip {
        flip_vertical(&mut img, &mut m);
    }
    adjust_brightness(&mut img, d.brightness);
    adjust_contrast(&mut img, d.contrast);
    adjust_saturation(&mut img, d.saturation);
    adjust_hue(&mut img, d.hue);
    if !d.affine.is_identity() {
        (img, m) = warp(&img, &m, d.affine.inverse(size), Interpolation::Lanczos);
    }
    if cfg.elastic_alpha != 0.0 {
        let (dx, dy) = elastic_field(size, cfg.elastic_sigma, cfg.elastic_alpha, rng);
        let w = size.0;
        let field = move |x: f64, y: f64| {
            let i = y as usize * w + x as usize;
            (x + dx[i], y + dy[i])
        };
        (img, m) = warp(&img, &m, field, cfg.elastic_interpolation);
    }
    (img, m)
}

pub fn flip_horizontal(img: &mut Image, mask: &mut Mask) {
    let w = img.width;
    img.data.chunks_mut(w).for_each(<[f32]>::reverse);
    mask.data.chunks_mut(w).for_each(<[u8]>::reverse);
}

pub fn flip_vertical(img: &mut Image, mask: &mut Mask) {
    let (w, h) = (img.width, img.height);
    for c in 0..3 {
        let plane = img.plane_mut(c);
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
    for y in 0..h / 2 {
        let (top, bottom) = mask.data.split_at_mut((h - 1 - y) * w);
        top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
    }
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// `clamp(f·v + (1 − f)·other)` per channel value.
fn blend(img: &mut Image, f: f64, other: impl Fn(usize) -> f32) {
    let f = f as f32;
    let n = img.width * img.height;
    for c in 0..3 {
        for (i, v) in img.plane_mut(c).iter_mut().enumerate() {
            *v = (f * *v + (1.0 - f) * other(i)).clamp(0.0, 1.0);
        }
    }
    debug_assert_eq!(img.data.len(), 3 * n);
}

pub fn adjust_brightness(img: &mut Image, factor: f64) {
    if factor != 1.0 {
        blend(img, factor, |_| 0.0);
    }
}

pub fn adjust_contrast(img: &mut Image, factor: f64) {
    if factor != 1.0 {
        let n = img.width * img.height;
        let sum: f64 = (0..n).map(|i| gray(img.data[i], img.data[n + i], img.data[2 * n + i]) as f64).sum();
        let mean = (sum / n as f64) as f32;
        blend(img, factor, |_| mean);
    }
}

pub fn adjust_saturation(img: &mut Image, factor: f64) {
    if factor != 1.0 {
        let n = img.width * img.height;
        let grays: Vec<f32> = (0..n).map(|i| gray(img.data[i], img.data[n + i], img.data[2 * n + i])).collect();
        blend(img, factor, |i| grays[i]);
    }
}

/// Rotates hue by `shift` turns in HSV space.
pub fn adjust_hue(img: &mut Image, shift: f64) {
    if shift == 0.0 {
        return;
    }
    let n = img.width * img.height;
    for i in 0..n {
        let (r, g, b) = (img.data[i], img.data[n + i], img.data[2 * n + i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb((h + shift as f32).rem_euclid(1.0), s, v);
        img.data[i] = r;
        img.data[n + i] = g;
        img.data[2 * n + i] = b;
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Snaps coordinates that are integral up to rounding noise (e.g. from
/// `cos 90°`) so exact pixel permutations stay exact.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() >= 3.0 {
        0.0
    } else {
        let px = PI * x;
        3.0 * px.sin() * (px / 3.0).sin() / (px * px)
    }
}

/// Filter taps `(index, weight)` around coordinate `v` on an axis of length `n`,
/// with edge clamping and normalized weights.
fn taps(v: f64, n: usize, interp: Interpolation, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let base = v.floor();
    let frac = v - base;
    let clamp = |i: f64| i.clamp(0.0, (n - 1) as f64) as usize;
    if frac == 0.0 {
        out.push((clamp(base), 1.0));
        return;
    }
    match interp {
        Interpolation::Bilinear => {
            out.push((clamp(base), 1.0 - frac));
            out.push((clamp(base + 1.0), frac));
        }
        Interpolation::Lanczos => {
            let mut total = 0.0;
            for k in -2..=3 {
                let wgt = lanczos3(frac - k as f64);
                out.push((clamp(base + k as f64), wgt));
                total += wgt;
            }
            out.iter_mut().for_each(|t| t.1 /= total);
        }
    }
}

/// Backward warp: output pixel `(x, y)` reads the source at `map(x, y)`.
fn warp(img: &Image, mask: &Mask, map: impl Fn(f64, f64) -> (f64, f64), interp: Interpolation) -> (Image, Mask) {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let mut out = Image::new(w, h);
    let mut out_mask = Mask::new(w, h);
    let (mut tx, mut ty) = (Vec::with_capacity(6), Vec::with_capacity(6));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let (sx, sy) = (snap(sx), snap(sy));
            let inside = |v: f64, len: usize| v >= -0.5 && v < len as f64 - 0.5;
            if !(inside(sx, w) && inside(sy, h)) {
                continue;
            }
            let o = y * w + x;
            out_mask.data[o] = mask.data[(sy.round() as usize).min(h - 1) * w + (sx.round() as usize).min(w - 1)];
            taps(sx, w, interp, &mut tx);
            taps(sy, h, interp, &mut ty);
            for c in 0..3 {
                let plane = &img.data[c * n..(c + 1) * n];
                let mut acc = 0.0;
                for &(iy, wy) in &ty {
                    let row = &plane[iy * w..(iy + 1) * w];
                    acc += wy * tx.iter().map(|&(ix, wx)| wx * row[ix] as f64).sum::<f64>();
                }
                out.data[c * n + o] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    (out, out_mask)
}

/// Half-sample symmetric reflection of index `i` into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let m = i.rem_euclid(2 * n as isize) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable Gaussian blur truncated at 4σ with reflect padding.
pub fn gaussian_blur(plane: &[f64], (w, h): (usize, usize), sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return plane.to_vec();
    }
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] =
                kernel.iter().enumerate().map(|(j, k)| k * row[reflect(x as isize + j as isize - radius, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                kernel.iter().enumerate().map(|(j, k)| k * tmp[reflect(y as isize + j as isize - radius, h) * w + x]).sum();
        }
    }
    out
}

/// Displacement field `α · G_σ ∗ N(0, 1)` for x and y.
pub fn elastic_field<R: Rng + ?Sized>((w, h): (usize, usize), sigma: f64, alpha: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut field = || {
        let noise: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
        gaussian_blur(&noise, (w, h), sigma).into_iter().map(|v| alpha * v).collect::<Vec<_>>()
    };
    let dx = field();
    let dy = field();
    (dx, dy)
}
