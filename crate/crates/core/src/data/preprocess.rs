use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ColorType, DynamicImage, ImageBuffer, ImageReader, Rgb};

use super::{Image, Mask};
use crate::backbone::VariantConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Converts a decoded RGB(A) image to planar `[0, 1]`; other colour types
/// (grayscale, luma-alpha) are rejected.
pub fn rgb_from_dynamic(img: &DynamicImage) -> Result<Image> {
    match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::Rgb16 | ColorType::Rgba16 | ColorType::Rgb32F | ColorType::Rgba32F => {}
        other => return Err(Error::Ingestion(format!("expected an RGB image, got {other:?}"))),
    }
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::new(w, h);
    let n = w * h;
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * n + i] = px.0[c];
        }
    }
    Ok(out)
}

/// Binarizes any decoded image by luminance ≥ 0.5.
pub fn mask_from_dynamic(img: &DynamicImage) -> Mask {
    let luma = img.to_luma8();
    Mask {
        width: luma.width() as usize,
        height: luma.height() as usize,
        data: luma.pixels().map(|p| u8::from(p.0[0] >= 128)).collect(),
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    rgb_from_dynamic(&open(path)?).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    Ok(mask_from_dynamic(&open(path)?))
}

/// Lanczos-3 resize, clamped back to `[0, 1]` (the kernel overshoots at edges).
pub fn resize_lanczos(img: &Image, width: usize, height: usize) -> Image {
    if (img.width, img.height) == (width, height) {
        return img.clone();
    }
    let n = img.width * img.height;
    let interleaved: Vec<f32> = (0..n).flat_map(|i| (0..3).map(move |c| (c, i))).map(|(c, i)| img.data[c * n + i]).collect();
    let buf: ImageBuffer<Rgb<f32>, _> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, interleaved).expect("buffer size matches");
    let resized = imageops::resize(&buf, width as u32, height as u32, FilterType::Lanczos3);
    let mut out = Image::new(width, height);
    let m = width * height;
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * m + i] = px.0[c].clamp(0.0, 1.0);
        }
    }
    out
}

/// Nearest-neighbour resize of a row-major plane using pixel-centre
/// alignment: output `o` reads input `⌊(o + ½)·src/dst⌋`.
pub fn resize_nearest<T: Copy>(plane: &[T], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    let map = |o: usize, src: usize, dst: usize| (((2 * o + 1) * src) / (2 * dst)).min(src - 1);
    let cols: Vec<usize> = (0..ow).map(|x| map(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let row = &plane[map(y, h, oh) * w..][..w];
        out.extend(cols.iter().map(|&x| row[x]));
    }
    out
}

pub fn resize_mask_nearest(mask: &Mask, width: usize, height: usize) -> Mask {
    Mask { width, height, data: resize_nearest(&mask.data, (mask.height, mask.width), (height, width)) }
}

/// `1 × 3 × H × W` tensor of `(x − mean) / std` per channel.
pub fn normalize(img: &Image) -> Tensor {
    Tensor::from_fn([1, 3, img.height, img.width], |_, c, y, x| (img.get(c, y, x) - IMAGENET_MEAN[c]) / IMAGENET_STD[c])
}

/// Inverse of [`normalize`] for sample `n` of a batch.
pub fn denormalize(t: &Tensor, n: usize) -> Image {
    let [_, c, h, w] = t.shape();
    assert_eq!(c, 3, "denormalize expects three channels");
    let mut out = Image::new(w, h);
    for c in 0..3 {
        for (dst, &v) in out.plane_mut(c).iter_mut().zip(t.channel(n, c)) {
            *dst = v * IMAGENET_STD[c] + IMAGENET_MEAN[c];
        }
    }
    out
}

/// Resizes an RGB image (Lanczos) and its mask (nearest) to the variant's
/// resolution and returns the normalized `1×3×R×R` image and `1×1×R×R` `{0,1}` mask.
pub fn preprocess(image: &DynamicImage, mask: &DynamicImage, variant: &VariantConfig) -> Result<(Tensor, Tensor)> {
    let r = variant.input_resolution;
    let img = resize_lanczos(&rgb_from_dynamic(image)?, r, r);
    let m = resize_mask_nearest(&mask_from_dynamic(mask), r, r);
    let mask = Tensor::from_vec([1, 1, r, r], m.data.iter().map(|&v| f32::from(v)).collect())?;
    Ok((normalize(&img), mask))
}

#[cfg(test)]
mod tests {
    use image::{GrayImage, Luma, RgbImage};

    use super::*;
    use crate::backbone::Variant;

    #[test]
    fn normalizes_mean_to_zero_and_inverts() {
        let mut img = Image::new(2, 1);
        img.data = vec![0.485, 1.0, 0.3, 0.0, 0.7, 0.25];
        let t = normalize(&img);
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        let back = denormalize(&t, 0);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_resize_pixel_centres() {
        assert_eq!(resize_nearest(&[1, 2, 3, 4], (1, 4), (1, 2)), [2, 4]);
        assert_eq!(resize_nearest(&[1, 2], (1, 2), (1, 4)), [1, 1, 2, 2]);
        assert_eq!(resize_nearest(&[7], (1, 1), (2, 3)), [7; 6]);
    }

    #[test]
    fn preprocess_large_frame_for_b4() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(1920, 1072, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 90])));
        let mask = DynamicImage::ImageLuma8(GrayImage::from_fn(1920, 1072, |x, _| Luma([if x < 700 { 255 } else { 3 }])));
        let (x, m) = preprocess(&img, &mask, &VariantConfig::new(Variant::B4)).unwrap();
        assert_eq!(x.shape(), [1, 3, 380, 380]);
        assert_eq!(m.shape(), [1, 1, 380, 380]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(m.at(0, 0, 10, 10), 1.0);
        assert_eq!(m.at(0, 0, 10, 370), 0.0);
    }

    #[test]
    fn grayscale_image_is_rejected() {
        let gray = DynamicImage::ImageLuma8(GrayImage::new(4, 4));
        assert!(matches!(rgb_from_dynamic(&gray), Err(Error::Ingestion(_))));
    }

    #[test]
    fn lanczos_keeps_constant_images_constant_and_in_range() {
        let mut img = Image::new(50, 30);
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = if i < 1500 { 0.25 } else { (i % 2) as f32 });
        let r = resize_lanczos(&img, 17, 23);
        assert!(r.plane(0).iter().all(|&v| (v - 0.25).abs() < 1e-5));
        assert!(r.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
