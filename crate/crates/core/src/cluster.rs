//! Class-specific IoU graphs and the cluster-size weighting of the IoU-weighted
//! entropy objective.
//!
//! Proposals sharing a predicted class are joined when their boxes overlap with
//! IoU at or above `theta`; each proposal is weighted by the size of its
//! connected component raised to `gamma`. The weights are computed once per
//! image and treated as constants by the gradient.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_THETA: f64 = 0.6;
pub const DEFAULT_GAMMA: f64 = 1.1;

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when both were already in the same set.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn set_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

/// Component membership for every proposal.
///
/// `component_id[i]` is the smallest proposal index in i's component, so ids
/// depend only on input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub classes: Vec<usize>,
    pub component_id: Vec<usize>,
    pub component_size: Vec<usize>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.component_id.iter().enumerate().filter(|(i, &c)| *i == c).count()
    }

    /// Component size -> number of components of that size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for (i, &c) in self.component_id.iter().enumerate() {
            if i == c {
                *hist.entry(self.component_size[i]).or_insert(0) += 1;
            }
        }
        hist
    }
}

/// Row-wise argmax; ties resolve to the lower class index.
pub fn predicted_classes(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Connected components of the per-class IoU graphs.
pub fn build_class_graphs(boxes: &[BBox], classes: &[usize], theta: f64) -> Result<ClusterAssignment> {
    if boxes.len() != classes.len() {
        return Err(Error::ShapeMismatch(format!("{} boxes but {} class labels", boxes.len(), classes.len())));
    }
    let n = boxes.len();
    let mut dsu = DisjointSet::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if classes[i] == classes[j] && iou(&boxes[i], &boxes[j]) >= theta {
                dsu.union(i, j);
            }
        }
    }
    let mut smallest = vec![usize::MAX; n];
    for i in 0..n {
        let r = dsu.find(i);
        smallest[r] = smallest[r].min(i);
    }
    let mut component_id = Vec::with_capacity(n);
    let mut component_size = Vec::with_capacity(n);
    for i in 0..n {
        let r = dsu.find(i);
        component_id.push(smallest[r]);
        component_size.push(dsu.set_size(r));
    }
    Ok(ClusterAssignment { classes: classes.to_vec(), component_id, component_size })
}

/// `w_i = |C(i)|^gamma`.
pub fn cluster_weights(assignment: &ClusterAssignment, gamma: f64) -> Vec<f64> {
    assignment.component_size.iter().map(|&s| (s as f64).powf(gamma)).collect()
}

/// Weighted mean entropy `sum(w_i H_i) / sum(w_i)`.
pub fn iwe_loss(entropies: &[f64], weights: &[f64]) -> Result<f64> {
    if entropies.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!("{} entropies but {} weights", entropies.len(), weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateWeights(total));
    }
    let weighted: f64 = entropies.iter().zip(weights).map(|(h, w)| h * w).sum();
    Ok(weighted / total)
}
