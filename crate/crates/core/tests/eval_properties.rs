use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlodtta::eval::{average_precision, evaluate, match_detections, ApReport, ImageResult};
use vlodtta::geometry::{BBox, Detection};
use vlodtta::oracle::{
    coco_fixture, random_boxes, random_detections, reference_average_precision, COCO_FIXTURE_EXPECTED,
};
use vlodtta::scene::GroundTruth;

const CLASSES: usize = 3;

fn random_images(seed: u64, n_images: usize) -> Vec<ImageResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_images)
        .map(|_| {
            let n_det = rng.random_range(0..30);
            let n_gt = rng.random_range(0..8);
            let detections = random_detections(&mut rng, n_det, CLASSES);
            let ground_truth = random_boxes(&mut rng, n_gt)
                .into_iter()
                .map(|bbox| GroundTruth { bbox, class_id: rng.random_range(0..CLASSES) })
                .collect();
            ImageResult { detections, ground_truth }
        })
        .collect()
}

fn all_entries(r: &ApReport) -> Vec<f64> {
    r.per_class.iter().flatten().flat_map(|row| row.iter().copied()).collect()
}

proptest! {
    #[test]
    fn ap_matches_the_reference_curve(flags in prop::collection::vec(any::<bool>(), 0..60), extra in 0usize..5) {
        let n_gt = flags.iter().filter(|&&f| f).count() + extra;
        let ours = average_precision(&flags, n_gt);
        let reference = reference_average_precision(&flags, n_gt);
        match (ours, reference) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn report_entries_lie_in_the_unit_interval(seed in any::<u64>(), n in 1usize..5) {
        let r = evaluate(&random_images(seed, n), CLASSES);
        for v in all_entries(&r).into_iter().chain([r.map, r.ap50, r.ap75]) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn lowest_scored_stray_detection_never_helps(seed in any::<u64>(), n in 1usize..5, class_id in 0..CLASSES) {
        let images = random_images(seed, n);
        let before = evaluate(&images, CLASSES);
        let mut after_images = images.clone();
        after_images[0].detections.push(Detection {
            bbox: BBox::new(5000.0, 5000.0, 5010.0, 5010.0).unwrap(),
            class_id,
            score: 0.0,
        });
        let after = evaluate(&after_images, CLASSES);
        for (a, b) in all_entries(&after).into_iter().zip(all_entries(&before)) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn duplicated_detections_match_no_extra_ground_truth(seed in any::<u64>(), thr_step in 0usize..10) {
        let images = random_images(seed, 1);
        let thr = 0.5 + 0.05 * thr_step as f64;
        let img = &images[0];
        let once = match_detections(&img.detections, &img.ground_truth, thr);
        let doubled: Vec<Detection> = img.detections.iter().chain(&img.detections).copied().collect();
        let twice = match_detections(&doubled, &img.ground_truth, thr);
        let count = |m: &[bool]| m.iter().filter(|&&f| f).count();
        prop_assert_eq!(count(&once.true_positive), count(&twice.true_positive));
    }

    #[test]
    fn strictly_increasing_score_map_leaves_ap_unchanged(seed in any::<u64>(), n in 1usize..5) {
        let images = random_images(seed, n);
        let mapped: Vec<ImageResult> = images
            .iter()
            .map(|img| ImageResult {
                detections: img.detections.iter().map(|d| Detection { score: d.score.powi(3) * 0.5 + 0.1, ..*d }).collect(),
                ground_truth: img.ground_truth.clone(),
            })
            .collect();
        prop_assert_eq!(evaluate(&images, CLASSES), evaluate(&mapped, CLASSES));
    }
}

#[test]
fn fixture_matches_independent_reference() {
    let (images, k) = coco_fixture();
    let r = evaluate(&images, k);
    for (got, want) in [r.map, r.ap50, r.ap75].into_iter().zip(COCO_FIXTURE_EXPECTED) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    // the class with detections but no ground truth is skipped
    assert_eq!(r.num_evaluated_classes(), k - 1);
}

#[test]
fn hand_built_curves() {
    assert_eq!(average_precision(&[true], 1), Some(1.0));
    assert_eq!(average_precision(&[], 3), Some(0.0));
    let ap = average_precision(&[false, true], 2).unwrap();
    assert!((ap - 51.0 / 101.0 * 0.5).abs() < 1e-9);
}
