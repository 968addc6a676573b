//! Slow, obviously-correct reference implementations and random instance
//! generators, shared by the test suites and `vlodtta check`.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adapt::AdaptState;
use crate::error::Result;
use crate::eval::ImageResult;
use crate::geometry::{iou, BBox, Detection};
use crate::grad::EpisodeConstants;
use crate::scene::ProposalSet;
use crate::scoring::{PromptPool, SelectionSets};

/// Component labels by depth-first search over an explicit adjacency matrix.
/// Each proposal is labelled with the smallest index in its component.
pub fn dfs_components(boxes: &[BBox], classes: &[usize], theta: f64) -> Vec<usize> {
    let n = boxes.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && classes[i] == classes[j] && iou(&boxes[i], &boxes[j]) >= theta).collect())
        .collect();
    let mut label = vec![usize::MAX; n];
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = start;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if adj[u][v] && label[v] == usize::MAX {
                    label[v] = start;
                    stack.push(v);
                }
            }
        }
    }
    label
}

/// Suppression by repeated selection of the best surviving detection.
pub fn brute_force_nms(dets: &[Detection], iou_thresh: f64, class_wise: bool) -> Vec<Detection> {
    let mut alive = vec![true; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.is_none_or(|b| dets[i].score > dets[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(dets[b]);
        for i in 0..dets.len() {
            let same = !class_wise || dets[i].class_id == dets[b].class_id;
            if alive[i] && (i == b || (same && iou(&dets[i].bbox, &dets[b].bbox) >= iou_thresh)) {
                alive[i] = false;
            }
        }
    }
    kept
}

/// 101-point AP straight from the definition: for each recall level, the best
/// precision at any rank whose recall reaches it.
pub fn reference_average_precision(true_positive: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut points = Vec::with_capacity(true_positive.len());
    let mut tp = 0usize;
    for (rank, &hit) in true_positive.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let total: f64 = (0..=100)
        .map(|r| {
            let level = r as f64 / 100.0;
            points.iter().filter(|(rc, _)| *rc >= level).map(|(_, pr)| *pr).fold(0.0, f64::max)
        })
        .sum();
    Some(total / 101.0)
}

/// Three images of hand-placed detections: duplicates, a wrong-class hit,
/// score ties across overlapping ground truth, and a class with detections
/// but no ground truth.
pub fn coco_fixture() -> (Vec<ImageResult>, usize) {
    #[derive(serde::Deserialize)]
    struct Doc {
        num_classes: usize,
        images: Vec<ImageResult>,
    }
    let doc: Doc = serde_json::from_str(include_str!("../tests/data/coco_fixture.json")).expect("fixture parses");
    (doc.images, doc.num_classes)
}

/// `(mAP, AP50, AP75)` of [`coco_fixture`], computed by
/// `tools/coco_reference.py`.
pub const COCO_FIXTURE_EXPECTED: [f64; 3] = [0.396_143_328_618_576_1, 0.640_876_944_837_340_7, 0.400_636_492_220_650_6];

/// `|mean ||v^ - e^||^2 - (2 - 2 mean cos)|` for unit rows `v` and unit `e`.
pub fn cosine_euclidean_gap(v: ArrayView2<'_, f64>, e: ArrayView1<'_, f64>) -> f64 {
    let n = v.nrows() as f64;
    let sq: f64 = v.rows().into_iter().map(|row| (&row - &e).mapv(|x| x * x).sum()).sum::<f64>() / n;
    let cos: f64 = v.rows().into_iter().map(|row| row.dot(&e)).sum::<f64>() / n;
    (sq - (2.0 - 2.0 * cos)).abs()
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut m: Array2<f64> = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Boxes grouped around a few centres so that overlaps are common.
pub fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    let centres: Vec<(f64, f64)> =
        (0..rng.random_range(1..=4)).map(|_| (rng.random_range(20.0..80.0), rng.random_range(20.0..80.0))).collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centres[rng.random_range(0..centres.len())];
            let w = rng.random_range(4.0..30.0);
            let h = rng.random_range(4.0..30.0);
            let x = cx + rng.random_range(-8.0..8.0) - w / 2.0;
            let y = cy + rng.random_range(-8.0..8.0) - h / 2.0;
            BBox::new(x, y, x + w, y + h).expect("positive extent")
        })
        .collect()
}

/// Scored detections over [`random_boxes`], with scores drawn from a small
/// set so ties occur.
pub fn random_detections(rng: &mut ChaCha8Rng, n: usize, num_classes: usize) -> Vec<Detection> {
    random_boxes(rng, n)
        .into_iter()
        .map(|bbox| Detection {
            bbox,
            class_id: rng.random_range(0..num_classes),
            score: (rng.random_range(1..=20) as f64) / 20.0,
        })
        .collect()
}

/// A random objective instance for gradient checking.
pub struct GradInstance {
    pub proposals: ProposalSet,
    pub pool: PromptPool,
    pub state: AdaptState,
    pub constants: EpisodeConstants,
}

/// Draws an instance with `N <= max_n`, `2 <= K <= max_k`, `T <= max_t`,
/// `d <= max_d` and reduction `r <= max_r` dividing `d`. The adapter is
/// moved away from its initialization so every parameter block carries
/// gradient.
pub fn random_grad_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_k: usize,
    max_t: usize,
    max_d: usize,
    max_r: usize,
) -> Result<GradInstance> {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(2..=max_k);
    let t = rng.random_range(1..=max_t);
    let r = rng.random_range(1..=max_r);
    // smallest multiple of r that is at least 2, then a random multiple below max_d
    let multiples: Vec<usize> = (1..=max_d / r).map(|m| m * r).filter(|&d| d >= 2).collect();
    let d = multiples[rng.random_range(0..multiples.len())];

    let boxes = random_boxes(rng, n);
    let features = random_unit_rows(rng, n, d);
    let classes = random_unit_rows(rng, k, d);
    let proposals = ProposalSet::new(boxes, features, classes)?;
    let pool_rows = random_unit_rows(rng, k * t, d);
    let pool =
        PromptPool::new(Array3::from_shape_vec((k, t, d), pool_rows.into_raw_vec_and_offset().0).expect("shape"))?;

    let mut state = AdaptState::zero_init(d, r, rng.random())?;
    let mut jitter = |m: &mut Array2<f64>, scale: f64| {
        m.mapv_inplace(|x| x + scale * rng.sample::<f64, _>(StandardNormal));
    };
    jitter(&mut state.phi.w_up, 0.3);
    jitter(&mut state.phi.w_down, 0.3);
    let b_down: Array1<f64> =
        Array1::from_shape_simple_fn(state.phi.hidden(), || 0.2 * rng.sample::<f64, _>(StandardNormal));
    let b_up: Array1<f64> = Array1::from_shape_simple_fn(d, || 0.1 * rng.sample::<f64, _>(StandardNormal));
    let delta: Array1<f64> = Array1::from_shape_simple_fn(d, || 0.1 * rng.sample::<f64, _>(StandardNormal));
    state.phi.b_down = b_down;
    state.phi.b_up = b_up;
    state.delta = delta;

    let sets = (0..k)
        .map(|_| {
            let keep = rng.random_range(1..=t);
            sample(rng, t, keep).into_vec()
        })
        .collect();
    let m = rng.random_range(1..=n);
    let top_m = sample(rng, n, m).into_vec();
    let weights = (0..m).map(|_| rng.random_range(1..=6) as f64).map(|s| s.powf(1.1)).collect();
    let constants = EpisodeConstants {
        weights,
        selections: SelectionSets::new(sets)?,
        lambda: rng.random_range(0.0..=1.0),
        kappa: rng.random_range(1.0..=20.0),
        top_m,
    };
    Ok(GradInstance { proposals, pool, state, constants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn brute_force_nms_examples() {
        let b = |x: f64| BBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
        let dets = [
            Detection { bbox: b(0.0), class_id: 0, score: 0.5 },
            Detection { bbox: b(1.0), class_id: 0, score: 0.9 },
            Detection { bbox: b(1.0), class_id: 1, score: 0.4 },
        ];
        let kept = brute_force_nms(&dets, 0.5, true);
        assert_eq!(kept, vec![dets[1], dets[2]]);
        assert_eq!(brute_force_nms(&dets, 0.5, false), vec![dets[1]]);
    }

    #[test]
    fn reference_ap_examples() {
        assert_eq!(reference_average_precision(&[true], 1), Some(1.0));
        let ap = reference_average_precision(&[false, true], 2).unwrap();
        assert!((ap - 51.0 / 101.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_instances_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let inst = random_grad_instance(&mut rng, 50, 5, 8, 16, 4).unwrap();
            let p = &inst.proposals;
            assert!(p.len() <= 50 && p.num_classes() <= 5 && p.dim() <= 16);
            assert!(inst.pool.prompts_per_class() <= 8);
            assert!(inst.state.phi.reduction() <= 4);
            assert_eq!(inst.constants.weights.len(), inst.constants.top_m.len());
        }
    }
}
