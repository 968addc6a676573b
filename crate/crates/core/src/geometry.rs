//! Axis-aligned boxes, IoU, greedy non-maximum suppression and top-M filtering.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default IoU threshold for suppression.
pub const DEFAULT_NMS_IOU: f64 = 0.5;
/// Default confidence threshold applied before suppression.
pub const DEFAULT_SCORE_THRESH: f64 = 0.1;

/// An axis-aligned box in pixel coordinates with strictly positive area.
///
/// Serialized as the array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Maps the box through `x -> scale * x + offset` on both axes.
    pub fn affine(&self, scale: f64, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(scale * self.x1 + dx, scale * self.y1 + dy, scale * self.x2 + dx, scale * self.y2 + dy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A scored, labelled box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Indices sorted by descending score; equal scores keep input order.
pub(crate) fn descending_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps the lower index first on ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in descending score order (ties by input index). A
/// detection is dropped when an already kept detection overlaps it with IoU at
/// or above `iou_thresh`; with `class_wise` only same-class detections
/// suppress each other. The output is in descending score order.
pub fn nms(dets: &[Detection], iou_thresh: f64, class_wise: bool) -> Vec<Detection> {
    let order = descending_order(dets.iter().map(|d| d.score));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for idx in order {
        let cand = &dets[idx];
        let suppressed =
            kept.iter().any(|k| (!class_wise || k.class_id == cand.class_id) && iou(&k.bbox, &cand.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

/// Indices of the `min(N, m)` rows with the largest row maximum, in
/// descending order of that maximum; ties go to the lower index.
pub fn top_m_filter(scores: ArrayView2<'_, f64>, m: usize) -> Vec<usize> {
    let maxima = scores.rows().into_iter().map(|row| {
        row.iter().copied().fold(f64::NEG_INFINITY, |acc, x| match x.partial_cmp(&acc) {
            Some(Ordering::Greater) => x,
            _ => acc,
        })
    });
    let mut order = descending_order(maxima);
    order.truncate(m);
    order
}
