//! F1, mean Dice, mean IoU, precision and recall.
//!
//! F1 / precision / recall pool pixel counts over the whole split (micro);
//! mDice / mIoU average per-image scores. Predictions are foreground where
//! `p ≥ threshold`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize, par_map, Sample, SampleSource};
use crate::error::{Error, Result};
use crate::model::EffiSegNet;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Description stored in every report so readers know how scores were pooled.
pub const AGGREGATION_NOTE: &str =
    "f1/precision/recall: micro-averaged over all pixels of the split; mdice/miou: mean of per-image scores; \
     empty prediction vs empty ground truth scores 1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }

    /// `(dice, iou)` of this pair; both 1 when neither mask has foreground.
    pub fn overlap(&self) -> (f64, f64) {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            return (1.0, 1.0);
        }
        let dice = 2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64;
        let iou = self.tp as f64 / union as f64;
        (dice, iou)
    }
}

/// Pixel counts of `pred ≥ threshold` against binary `gt`.
pub fn confusion_counts<T: Real>(pred: &[T], gt: &[T], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    let thr = T::lit(threshold);
    let half = T::lit(0.5);
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p >= thr, g >= half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(precision, recall, f1)`; a ratio with zero denominator is 0, except
/// that everything is 1 when there is no foreground on either side.
pub fn micro_metrics(c: &ConfusionCounts) -> (f64, f64, f64) {
    if c.tp + c.fp + c.fn_ == 0 {
        return (1.0, 1.0, 1.0);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

/// `(dice, iou)` for one image pair.
pub fn per_image_overlap<T: Real>(pred: &[T], gt: &[T], threshold: f64) -> Result<(f64, f64)> {
    Ok(confusion_counts(pred, gt, threshold)?.overlap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub f1: f64,
    pub mdice: f64,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub aggregation: String,
    pub aggregate_counts: ConfusionCounts,
    pub per_image: Vec<ImageScore>,
}

impl MetricsReport {
    /// Builds the report from per-image `(id, counts)`.
    pub fn from_counts(model: &str, threshold: f64, images: Vec<(String, ConfusionCounts)>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("cannot evaluate an empty split".into()));
        }
        let total = images.iter().fold(ConfusionCounts::default(), |acc, (_, c)| acc.merge(*c));
        let (precision, recall, f1) = micro_metrics(&total);
        let per_image: Vec<ImageScore> = images
            .into_iter()
            .map(|(id, counts)| {
                let (dice, iou) = counts.overlap();
                ImageScore { id, dice, iou, counts }
            })
            .collect();
        let n = per_image.len() as f64;
        let mdice = per_image.iter().map(|s| s.dice).sum::<f64>() / n;
        let miou = per_image.iter().map(|s| s.iou).sum::<f64>() / n;
        Ok(Self {
            model: model.to_string(),
            f1,
            mdice,
            miou,
            precision,
            recall,
            threshold,
            aggregation: AGGREGATION_NOTE.to_string(),
            aggregate_counts: total,
            per_image,
        })
    }

    pub const CSV_HEADER: &'static str = "model,F1,mDice,mIoU,Precision,Recall";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.model, self.f1, self.mdice, self.miou, self.precision, self.recall
        )
    }

    /// Writes `<stem>.json` (full report) and `<stem>.csv` (header + one row).
    pub fn write(&self, stem: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let csv = format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row());
        crate::weights::write_atomic(&stem.with_extension("json"), json.as_bytes())?;
        crate::weights::write_atomic(&stem.with_extension("csv"), csv.as_bytes())
    }
}

/// Anything that turns samples into `N×1×H×W` foreground probabilities.
pub trait MaskPredictor: Sync {
    fn predict(&self, samples: &[Sample]) -> Result<Tensor>;
}

impl MaskPredictor for EffiSegNet {
    fn predict(&self, samples: &[Sample]) -> Result<Tensor> {
        let images: Vec<Tensor> = samples.iter().map(|s| normalize(&s.image)).collect();
        self.predict_mask_probabilities(&Tensor::stack(&images)?)
    }
}

/// Predictor that returns the ground truth, for harness checks.
pub struct GroundTruthPredictor;

impl MaskPredictor for GroundTruthPredictor {
    fn predict(&self, samples: &[Sample]) -> Result<Tensor> {
        let masks: Vec<Tensor> = samples
            .iter()
            .map(|s| Tensor::from_vec([1, 1, s.mask.height, s.mask.width], s.mask.data.iter().map(|&v| f32::from(v)).collect()))
            .collect::<Result<_>>()?;
        Tensor::stack(&masks)
    }
}

/// Per-image confusion counts over `ids`, predicted in chunks of `batch_size`.
pub fn predict_counts(
    predictor: &dyn MaskPredictor,
    source: &dyn SampleSource,
    ids: &[String],
    resolution: usize,
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<(String, ConfusionCounts)>> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let samples = par_map(chunk, |id| source.load(id, resolution)).into_iter().collect::<Result<Vec<_>>>()?;
        let probs = predictor.predict(&samples)?;
        for (i, s) in samples.iter().enumerate() {
            let gt: Vec<f32> = s.mask.data.iter().map(|&v| f32::from(v)).collect();
            out.push((s.id.clone(), confusion_counts(probs.sample(i), &gt, threshold)?));
        }
    }
    Ok(out)
}

/// Runs `predictor` over `ids` (no augmentation) and reports all five metrics.
pub fn evaluate(
    model_name: &str,
    predictor: &dyn MaskPredictor,
    source: &dyn SampleSource,
    ids: &[String],
    resolution: usize,
    threshold: f64,
    batch_size: usize,
) -> Result<MetricsReport> {
    if ids.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let counts = predict_counts(predictor, source, ids, resolution, threshold, batch_size)?;
    MetricsReport::from_counts(model_name, threshold, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic, MemorySource};

    #[test]
    fn hand_counted_examples() {
        let c = confusion_counts(&[1.0f32, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let all = confusion_counts(&[0.5f32; 4], &[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(all.tp + all.fp, 4);
        assert!(confusion_counts(&[0.5f32; 3], &[1.0; 4], 0.5).is_err());
    }

    #[test]
    fn micro_examples() {
        let c = ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 };
        let (p, r, f) = micro_metrics(&c);
        assert!((p - 0.8).abs() < 1e-15 && (r - 0.8).abs() < 1e-15 && (f - 0.8).abs() < 1e-15);
        assert_eq!(micro_metrics(&ConfusionCounts { tn: 5, ..Default::default() }), (1.0, 1.0, 1.0));
        assert_eq!(micro_metrics(&ConfusionCounts { fp: 3, ..Default::default() }).0, 0.0);
    }

    #[test]
    fn overlap_examples() {
        let (d, i) = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 }.overlap();
        assert!((d - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(i, 0.5);
        assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-15);
        assert_eq!(ConfusionCounts { tp: 0, fp: 3, fn_: 2, tn: 1 }.overlap(), (0.0, 0.0));
        assert_eq!(ConfusionCounts { tn: 9, ..Default::default() }.overlap(), (1.0, 1.0));
    }

    #[test]
    fn ground_truth_predictor_scores_one_and_empty_split_fails() {
        let source = MemorySource::new(synthetic::blobs(3, 16, 2));
        let ids = source.ids();
        let r = evaluate("gt", &GroundTruthPredictor, &source, &ids, 16, 0.5, 2).unwrap();
        assert_eq!([r.f1, r.mdice, r.miou, r.precision, r.recall], [1.0; 5]);
        assert_eq!(r.per_image.len(), 3);
        assert!(matches!(evaluate("gt", &GroundTruthPredictor, &source, &[], 16, 0.5, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn background_predictor_has_zero_recall() {
        struct Background;
        impl MaskPredictor for Background {
            fn predict(&self, samples: &[Sample]) -> Result<Tensor> {
                Ok(Tensor::zeros([samples.len(), 1, samples[0].mask.height, samples[0].mask.width]))
            }
        }
        let source = MemorySource::new(synthetic::blobs(2, 16, 3));
        let r = evaluate("bg", &Background, &source, &source.ids(), 16, 0.5, 4).unwrap();
        assert_eq!(r.recall, 0.0);
    }
}
