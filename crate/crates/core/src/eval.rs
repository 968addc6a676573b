//! COCO-protocol average precision: greedy per-image matching, 101-point
//! interpolated AP, and the 0.50:0.05:0.95 IoU threshold grid.
//!
//! Area ranges and the per-image detection cap of the reference tool are not
//! modelled; every detection takes part.

use serde::{Deserialize, Serialize};

use crate::geometry::{descending_order, iou, Detection};
use crate::scene::GroundTruth;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

const RECALL_POINTS: usize = 101;

/// Matching outcome for one image (or one image and class), in descending
/// score order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub scores: Vec<f64>,
    pub true_positive: Vec<bool>,
    pub n_gt: usize,
}

/// Greedy matching: each detection, highest score first, takes the unmatched
/// same-class ground truth with the largest IoU at or above `iou_thresh`.
/// Equal IoUs resolve to the later ground truth, as in the reference COCO
/// tool.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> Matching {
    let order = descending_order(dets.iter().map(|d| d.score));
    let mut taken = vec![false; gts.len()];
    let mut scores = Vec::with_capacity(dets.len());
    let mut true_positive = Vec::with_capacity(dets.len());
    for idx in order {
        let det = &dets[idx];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != det.class_id {
                continue;
            }
            let overlap = iou(&det.bbox, &gt.bbox);
            if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap >= b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        scores.push(det.score);
        true_positive.push(best.is_some());
    }
    Matching { scores, true_positive, n_gt: gts.len() }
}

/// 101-point interpolated AP for flags already in descending score order.
/// `None` when there is no ground truth.
pub fn average_precision(true_positive: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let nd = true_positive.len();
    let mut recall = Vec::with_capacity(nd);
    let mut precision = Vec::with_capacity(nd);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in true_positive {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope, non-increasing in rank
    for i in (0..nd.saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut ptr = 0;
    for r in 0..RECALL_POINTS {
        let threshold = r as f64 / (RECALL_POINTS - 1) as f64;
        while ptr < nd && recall[ptr] < threshold {
            ptr += 1;
        }
        if ptr < nd {
            total += precision[ptr];
        }
    }
    Some(total / RECALL_POINTS as f64)
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    /// AP per class at each IoU threshold; `None` for classes without ground
    /// truth.
    pub per_class: Vec<Option<[f64; 10]>>,
}

impl ApReport {
    pub fn num_evaluated_classes(&self) -> usize {
        self.per_class.iter().filter(|c| c.is_some()).count()
    }
}

/// AP over a set of images for classes `0..num_classes`.
///
/// Detections of one class are ranked jointly across images by score (ties by
/// image order, then by rank within the image); matching stays per image.
pub fn evaluate(images: &[ImageResult], num_classes: usize) -> ApReport {
    let thresholds = iou_thresholds();
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let per_image: Vec<(Vec<Detection>, Vec<GroundTruth>)> = images
            .iter()
            .map(|img| {
                let d = img.detections.iter().filter(|d| d.class_id == class).copied().collect();
                let g = img.ground_truth.iter().filter(|g| g.class_id == class).copied().collect();
                (d, g)
            })
            .collect();
        let n_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
        if n_gt == 0 {
            per_class.push(None);
            continue;
        }
        let mut row = [0.0; 10];
        for (t, &thr) in thresholds.iter().enumerate() {
            let mut scores = Vec::new();
            let mut flags = Vec::new();
            for (dets, gts) in &per_image {
                let m = match_detections(dets, gts, thr);
                scores.extend(m.scores);
                flags.extend(m.true_positive);
            }
            let order = descending_order(scores.iter().copied());
            let ranked: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
            row[t] = average_precision(&ranked, n_gt).expect("n_gt > 0");
        }
        per_class.push(Some(row));
    }

    let evaluated: Vec<&[f64; 10]> = per_class.iter().flatten().collect();
    let mean_at = |t: usize| -> f64 {
        if evaluated.is_empty() {
            0.0
        } else {
            evaluated.iter().map(|r| r[t]).sum::<f64>() / evaluated.len() as f64
        }
    };
    let per_threshold: Vec<f64> = (0..thresholds.len()).map(mean_at).collect();
    let map = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    ApReport { map, ap50: per_threshold[0], ap75: per_threshold[5], per_class }
}
