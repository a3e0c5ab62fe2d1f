//! Property tests for the invariants of the data pipeline, losses, metrics,
//! schedule and decoder.

use std::path::PathBuf;

use effisegnet::data::{
    augment, denormalize, normalize, resize_mask_nearest, sample_rng, synthetic, AugmentationConfig, DatasetSplit,
    Image, Interpolation, Mask, SampleEntry, SampleIndex,
};
use effisegnet::eval::{confusion_counts, micro_metrics, MetricsReport};
use effisegnet::fusion::upsample_to_input;
use effisegnet::train::{bce_loss, combined_loss, dice_loss, lr_at_epoch};
use effisegnet::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn aug_config() -> impl Strategy<Value = AugmentationConfig> {
    (
        (0.0..=1.0f64, 0.0..=1.0f64),
        (0.5..1.0f64, 1.0..1.5f64),
        (0.0..=0.5f64, 0.0..=0.5f64, 0.0..=0.2f64),
        (0.5..1.0f64, 1.0..1.5f64, 0.0..=0.2f64),
        (-180.0..0.0f64, 0.0..180.0f64),
        (0.0..8.0f64, 0.0..20.0f64, any::<bool>()),
    )
        .prop_map(|(flips, bright, jitter, affine, rot, elastic)| AugmentationConfig {
            enabled: true,
            hflip_prob: flips.0,
            vflip_prob: flips.1,
            brightness_range: [bright.0, bright.1],
            contrast_factor: jitter.0,
            saturation_factor: jitter.1,
            hue_factor: jitter.2,
            affine_scale_range: [affine.0, affine.1],
            affine_translate_frac: affine.2,
            affine_rotate_deg: [rot.0, rot.1],
            elastic_sigma: elastic.0,
            elastic_alpha: elastic.1,
            elastic_interpolation: if elastic.2 { Interpolation::Lanczos } else { Interpolation::Bilinear },
        })
}

fn probs_and_target(max: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (1..max).prop_flat_map(|n| (prop::collection::vec(0.0..=1.0f32, n), prop::collection::vec(prop::bool::ANY, n)))
        .prop_map(|(p, t)| (p, t.into_iter().map(|b| f32::from(u8::from(b))).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_keeps_masks_binary_and_shapes(cfg in aug_config(), seed in any::<u64>(), size in 12usize..40) {
        let sample = synthetic::blob("p", size, &mut ChaCha8Rng::seed_from_u64(seed));
        let (img, mask) = augment(&sample.image, &sample.mask, &cfg, &mut sample_rng(seed, "p", 0));
        prop_assert!(mask.is_binary());
        prop_assert_eq!((mask.width, mask.height, img.width, img.height), (size, size, size, size));
        prop_assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augmentation_is_a_function_of_seed_id_epoch(cfg in aug_config(), seed in any::<u64>(), epoch in 0usize..1000) {
        let sample = synthetic::blob("p", 24, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = augment(&sample.image, &sample.mask, &cfg, &mut sample_rng(seed, "p", epoch));
        let b = augment(&sample.image, &sample.mask, &cfg, &mut sample_rng(seed, "p", epoch));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn identity_augmentation_is_identity(seed in any::<u64>()) {
        let sample = synthetic::blob("p", 20, &mut ChaCha8Rng::seed_from_u64(seed));
        let (img, mask) = augment(&sample.image, &sample.mask, &AugmentationConfig::identity(), &mut sample_rng(seed, "p", 3));
        prop_assert_eq!(img, sample.image);
        prop_assert_eq!(mask, sample.mask);
    }

    #[test]
    fn normalize_round_trips(w in 1usize..12, h in 1usize..12, data in prop::collection::vec(0.0..=1.0f32, 3 * 144)) {
        let img = Image { width: w, height: h, data: data[..3 * w * h].to_vec() };
        let back = denormalize(&normalize(&img), 0);
        let err = img.data.iter().zip(&back.data).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err <= 1e-6, "max error {}", err);
    }

    #[test]
    fn nearest_mask_resize_stays_binary(w in 1usize..20, h in 1usize..20, ow in 1usize..40, oh in 1usize..40, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = Mask { width: w, height: h, data: (0..w * h).map(|_| u8::from(rng.random_bool(0.5))).collect() };
        let out = resize_mask_nearest(&mask, ow, oh);
        prop_assert!(out.is_binary());
        prop_assert_eq!(out.data.len(), ow * oh);
    }

    #[test]
    fn losses_are_bounded((p, t) in probs_and_target(200), smooth in 0.0..1.0f64) {
        let n = p.len();
        let probs = Tensor::from_vec([1, 1, 1, n], p).unwrap();
        let target = Tensor::from_vec([1, 1, 1, n], t).unwrap();
        let d = dice_loss(&probs, &target, smooth.max(1e-6)).unwrap();
        prop_assert!((0.0..=1.0).contains(&d), "dice {}", d);
        let b = bce_loss(&probs, &target).unwrap();
        prop_assert!(b.is_finite() && b >= 0.0);
        prop_assert!((combined_loss(&probs, &target, smooth.max(1e-6)).unwrap() - (d + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_unit_interval_and_counts_sum((p, t) in probs_and_target(300), thr in 0.0..=1.0f64) {
        let c = confusion_counts(&p, &t, thr).unwrap();
        prop_assert_eq!(c.total() as usize, p.len());
        let (precision, recall, f1) = micro_metrics(&c);
        let (dice, iou) = c.overlap();
        for v in [precision, recall, f1, dice, iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(iou <= dice);
    }

    #[test]
    fn micro_f1_ignores_image_order(images in prop::collection::vec(probs_and_target(50), 1..12), rot in 0usize..12) {
        let counts: Vec<(String, _)> = images
            .iter()
            .enumerate()
            .map(|(i, (p, t))| (format!("{i}"), confusion_counts(p, t, 0.5).unwrap()))
            .collect();
        let mut shuffled = counts.clone();
        shuffled.rotate_left(rot % counts.len());
        shuffled.reverse();
        let a = MetricsReport::from_counts("a", 0.5, counts).unwrap();
        let b = MetricsReport::from_counts("b", 0.5, shuffled).unwrap();
        prop_assert_eq!(a.f1, b.f1);
        prop_assert_eq!(a.aggregate_counts, b.aggregate_counts);
        prop_assert!((a.mdice - b.mdice).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(epochs in 1usize..2000, lo in 1e-7..1e-4f64, span in 0.0..1e-3f64) {
        let hi = lo + span;
        let mut prev = f64::INFINITY;
        for e in (0..=epochs).step_by((epochs / 50).max(1)) {
            let lr = lr_at_epoch(e, epochs, hi, lo).unwrap();
            prop_assert!(lr <= prev && lr >= lo * (1.0 - 1e-12) && lr <= hi * (1.0 + 1e-12));
            prev = lr;
        }
    }

    #[test]
    fn upsample_reaches_target_and_copies_values(h in 1usize..9, w in 1usize..9, fy in 1usize..5, fx in 1usize..5, extra in 0usize..3) {
        let (th, tw) = (h * fy + extra, w * fx + extra);
        let m = Tensor::<f32>::from_fn([1, 2, h, w], |_, c, y, x| (c * 100 + y * 10 + x) as f32);
        let up = upsample_to_input(&m, (th, tw)).unwrap();
        prop_assert_eq!(up.shape(), [1, 2, th, tw]);
        prop_assert!(up.data().iter().all(|v| m.data().contains(v)));
    }

    #[test]
    fn generated_splits_partition_the_index(n in 1usize..300, seed in any::<u64>()) {
        let entries = (0..n)
            .map(|i| SampleEntry { id: format!("{i:04}"), image_path: PathBuf::new(), mask_path: PathBuf::new() })
            .collect();
        let index = SampleIndex { source_root: PathBuf::new(), entries };
        let split = DatasetSplit::generate(&index, seed);
        prop_assert!(split.validate(&index).is_ok());
        let mut all: Vec<&String> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(split.clone(), DatasetSplit::generate(&index, seed));
    }
}
