//! Per-image detector outputs and the JSON exchange format used by the CLI and
//! the C ABI.
//!
//! A scene document is a single JSON object:
//!
//! ```json
//! { "d": 2, "K": 2, "T": 1,
//!   "boxes": [[x1, y1, x2, y2], ...],          // N x 4
//!   "features": [[...], ...],                  // N x d
//!   "class_embeddings": [[...], ...],          // K x d
//!   "prompt_pool": [[[...], ...], ...],        // K x T x d
//!   "gt": [{"box": [x1, y1, x2, y2], "class_id": 0}, ...] }
//! ```

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scoring::PromptPool;

/// Boxes, region features and base class embeddings for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    boxes: Vec<BBox>,
    features: Array2<f64>,
    class_embeddings: Array2<f64>,
}

impl ProposalSet {
    pub fn new(boxes: Vec<BBox>, features: Array2<f64>, class_embeddings: Array2<f64>) -> Result<Self> {
        if boxes.len() != features.nrows() {
            return Err(Error::ShapeMismatch(format!("{} boxes but {} feature rows", boxes.len(), features.nrows())));
        }
        if features.ncols() != class_embeddings.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "features have dimension {}, class embeddings {}",
                features.ncols(),
                class_embeddings.ncols()
            )));
        }
        if class_embeddings.nrows() < 2 {
            return Err(Error::ShapeMismatch("at least two classes are required".into()));
        }
        if features.ncols() < 2 {
            return Err(Error::ShapeMismatch("feature dimension must be at least 2".into()));
        }
        if features.iter().chain(class_embeddings.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("proposal set"));
        }
        Ok(Self { boxes, features, class_embeddings })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.nrows()
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn class_embeddings(&self) -> ArrayView2<'_, f64> {
        self.class_embeddings.view()
    }

    /// Rows `indices` of this set, in the given order.
    pub fn subset(&self, indices: &[usize]) -> ProposalSet {
        let boxes = indices.iter().map(|&i| self.boxes[i]).collect();
        let features = self.features.select(ndarray::Axis(0), indices);
        ProposalSet { boxes, features, class_embeddings: self.class_embeddings.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
}

/// Wire form of one scene: proposals, text side and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub boxes: Vec<BBox>,
    pub features: Vec<Vec<f64>>,
    pub class_embeddings: Vec<Vec<f64>>,
    pub prompt_pool: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub gt: Vec<GroundTruth>,
}

impl SceneDocument {
    pub fn from_parts(proposals: &ProposalSet, pool: &PromptPool, gt: &[GroundTruth]) -> Self {
        let rows = |m: ArrayView2<'_, f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        let e = pool.embeddings();
        let prompt_pool = e.outer_iter().map(|class| class.rows().into_iter().map(|r| r.to_vec()).collect()).collect();
        Self {
            d: proposals.dim(),
            k: proposals.num_classes(),
            t: pool.prompts_per_class(),
            boxes: proposals.boxes().to_vec(),
            features: rows(proposals.features()),
            class_embeddings: rows(proposals.class_embeddings()),
            prompt_pool,
            gt: gt.to_vec(),
        }
    }

    /// Validates every declared dimension and builds the in-memory types.
    pub fn into_parts(self) -> Result<(ProposalSet, PromptPool, Vec<GroundTruth>)> {
        let (d, k, t) = (self.d, self.k, self.t);
        let n = self.boxes.len();
        let features = matrix(&self.features, n, d, "features")?;
        let class_embeddings = matrix(&self.class_embeddings, k, d, "class_embeddings")?;
        if self.prompt_pool.len() != k {
            return Err(Error::ShapeMismatch(format!("prompt_pool has {} classes, K = {k}", self.prompt_pool.len())));
        }
        let mut flat = Vec::with_capacity(k * t * d);
        for (ci, class) in self.prompt_pool.iter().enumerate() {
            if class.len() != t {
                return Err(Error::ShapeMismatch(format!(
                    "prompt_pool class {ci} has {} prompts, T = {t}",
                    class.len()
                )));
            }
            for (ti, prompt) in class.iter().enumerate() {
                if prompt.len() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "prompt_pool[{ci}][{ti}] has length {}, d = {d}",
                        prompt.len()
                    )));
                }
                flat.extend_from_slice(prompt);
            }
        }
        if let Some(g) = self.gt.iter().find(|g| g.class_id >= k) {
            return Err(Error::ShapeMismatch(format!("gt class {} outside 0..{k}", g.class_id)));
        }
        let pool = PromptPool::new(Array3::from_shape_vec((k, t, d), flat).expect("length checked"))?;
        let proposals = ProposalSet::new(self.boxes, features, class_embeddings)?;
        Ok((proposals, pool, self.gt))
    }
}

fn matrix(rows: &[Vec<f64>], n: usize, d: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n {
        return Err(Error::ShapeMismatch(format!("{what} has {} rows, expected {n}", rows.len())));
    }
    let mut flat = Vec::with_capacity(n * d);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::ShapeMismatch(format!("{what}[{i}] has length {}, expected {d}", row.len())));
        }
        flat.extend_from_slice(row);
    }
    Ok(Array2::from_shape_vec((n, d), flat).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> SceneDocument {
        serde_json::from_str(
            r#"{"d": 2, "K": 2, "T": 1,
                "boxes": [[0, 0, 1, 1]],
                "features": [[1.0, 0.0]],
                "class_embeddings": [[1.0, 0.0], [0.0, 1.0]],
                "prompt_pool": [[[1.0, 0.1]], [[0.1, 1.0]]],
                "gt": [{"box": [0, 0, 1, 1], "class_id": 0}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let (p, pool, gt) = doc().into_parts().unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(pool.prompts_per_class(), 1);
        assert_eq!(gt.len(), 1);
        let back = SceneDocument::from_parts(&p, &pool, &gt);
        assert_eq!(back, doc());
    }

    #[test]
    fn rejects_bad_shapes_and_keys() {
        let mut d = doc();
        d.features[0].push(3.0);
        assert!(matches!(d.into_parts(), Err(Error::ShapeMismatch(_))));
        let mut d = doc();
        d.prompt_pool.pop();
        assert!(d.into_parts().is_err());
        let mut d = doc();
        d.gt[0].class_id = 5;
        assert!(d.into_parts().is_err());
        let extra = r#"{"d": 2, "K": 2, "T": 1, "boxes": [], "features": [],
            "class_embeddings": [[1,0],[0,1]], "prompt_pool": [[[1,0]],[[0,1]]], "extra": 1}"#;
        assert!(serde_json::from_str::<SceneDocument>(extra).is_err());
    }
}
