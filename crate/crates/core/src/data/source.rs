use std::collections::BTreeMap;

use super::augment::{augment, sample_rng, AugmentationConfig};
use super::index::SampleIndex;
use super::preprocess::{load_image, load_mask, normalize, resize_lanczos, resize_mask_nearest};
use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One resized, not yet normalized image/mask pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl Sample {
    /// Lanczos-resizes the image and nearest-resizes the mask to `r × r`.
    pub fn resized(&self, r: usize) -> Sample {
        Sample {
            id: self.id.clone(),
            image: resize_lanczos(&self.image, r, r),
            mask: resize_mask_nearest(&self.mask, r, r),
        }
    }
}

/// Provides samples by id at a requested square resolution.
pub trait SampleSource: Sync {
    fn ids(&self) -> Vec<String>;
    fn load(&self, id: &str, resolution: usize) -> Result<Sample>;
}

/// Reads samples from an indexed dataset directory on demand.
#[derive(Debug, Clone)]
pub struct FolderSource {
    pub index: SampleIndex,
}

impl SampleSource for FolderSource {
    fn ids(&self) -> Vec<String> {
        self.index.ids().map(str::to_string).collect()
    }

    fn load(&self, id: &str, resolution: usize) -> Result<Sample> {
        let entry = self.index.get(id).ok_or_else(|| Error::Ingestion(format!("unknown sample id {id}")))?;
        let sample = Sample { id: id.to_string(), image: load_image(&entry.image_path)?, mask: load_mask(&entry.mask_path)? };
        Ok(sample.resized(resolution))
    }
}

/// Samples held in memory (synthetic data, tests, the browser demo).
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    samples: BTreeMap<String, Sample>,
}

impl MemorySource {
    pub fn new(samples: impl IntoIterator<Item = Sample>) -> Self {
        Self { samples: samples.into_iter().map(|s| (s.id.clone(), s)).collect() }
    }
}

impl SampleSource for MemorySource {
    fn ids(&self) -> Vec<String> {
        self.samples.keys().cloned().collect()
    }

    fn load(&self, id: &str, resolution: usize) -> Result<Sample> {
        let s = self.samples.get(id).ok_or_else(|| Error::Ingestion(format!("unknown sample id {id}")))?;
        Ok(if s.image.width == resolution && s.image.height == resolution { s.clone() } else { s.resized(resolution) })
    }
}

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Loads `ids`, optionally augments each with its own `(seed, id, epoch)`
/// stream, and stacks normalized images (`N×3×R×R`) and masks (`N×1×R×R`).
pub fn make_batch(
    source: &dyn SampleSource,
    ids: &[String],
    resolution: usize,
    augmentation: Option<(&AugmentationConfig, u64, usize)>,
) -> Result<(Tensor, Tensor)> {
    let loaded = par_map(ids, |id| -> Result<(Tensor, Tensor)> {
        let mut s = source.load(id, resolution)?;
        if let Some((cfg, seed, epoch)) = augmentation {
            let mut rng = sample_rng(seed, id, epoch);
            (s.image, s.mask) = augment(&s.image, &s.mask, cfg, &mut rng);
        }
        let mask = Tensor::from_vec([1, 1, resolution, resolution], s.mask.data.iter().map(|&v| f32::from(v)).collect())?;
        Ok((normalize(&s.image), mask))
    });
    let (images, masks): (Vec<_>, Vec<_>) = loaded.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    #[test]
    fn batches_are_deterministic_and_binary() {
        let source = MemorySource::new(synthetic::blobs(3, 32, 5));
        let ids = source.ids();
        let cfg = AugmentationConfig::default();
        let (x1, m1) = make_batch(&source, &ids, 24, Some((&cfg, 9, 2))).unwrap();
        let (x2, m2) = make_batch(&source, &ids, 24, Some((&cfg, 9, 2))).unwrap();
        assert_eq!(x1.shape(), [3, 3, 24, 24]);
        assert_eq!(m1.shape(), [3, 1, 24, 24]);
        assert_eq!(x1.data(), x2.data());
        assert_eq!(m1.data(), m2.data());
        assert!(m1.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let (x3, _) = make_batch(&source, &ids, 24, Some((&cfg, 9, 3))).unwrap();
        assert_ne!(x1.data(), x3.data());
    }

    #[test]
    fn unknown_id_is_an_error() {
        let source = MemorySource::new(synthetic::blobs(1, 8, 0));
        assert!(make_batch(&source, &["nope".to_string()], 8, None).is_err());
    }
}
