//! Dataset ingestion, splitting, resizing, augmentation and normalization.
//!
//! Images travel through the pipeline as planar RGB in `[0, 1]` ([`Image`])
//! and masks as `{0, 1}` bytes ([`Mask`]). Normalization to ImageNet
//! statistics happens last, when a batch tensor is assembled.

mod augment;
mod index;
mod preprocess;
mod source;
mod split;
pub mod synthetic;

pub use augment::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, augment, elastic_field, flip_horizontal,
    flip_vertical, gaussian_blur, sample_rng, AffineDraw, AugmentationConfig, Interpolation,
};
pub use index::{index_dataset, SampleEntry, SampleIndex, IMAGES_DIR, MASKS_DIR};
pub use preprocess::{
    denormalize, load_image, load_mask, mask_from_dynamic, normalize, preprocess, resize_lanczos,
    resize_mask_nearest, resize_nearest, rgb_from_dynamic, IMAGENET_MEAN, IMAGENET_STD,
};
pub(crate) use source::par_map;
pub use source::{make_batch, FolderSource, MemorySource, Sample, SampleSource};
pub use split::{load_split, DatasetSplit, SplitSpec};

/// Planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `3 × height × width`, channel-major.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Interleaved 8-bit RGBA, as used by browser canvases.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(4 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push((self.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
        out
    }
}

/// Binary mask, one byte per pixel, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}
