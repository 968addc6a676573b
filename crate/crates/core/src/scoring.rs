//! Region/text similarity scores, posteriors and entropies, and the
//! image-conditioned prompt selection path (compatibility, top-rho selection,
//! aggregation, fusion with the detector score).

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::descending_order;

/// Rows with an L2 norm at or below this value cannot be normalized.
pub const NORM_EPS: f64 = 1e-12;

/// Per-class bank of prompt embeddings, shape `K x T x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool {
    embeddings: Array3<f64>,
}

impl PromptPool {
    pub fn new(embeddings: Array3<f64>) -> Result<Self> {
        let (k, t, d) = embeddings.dim();
        if k == 0 || t == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!("prompt pool must be non-empty, got {k}x{t}x{d}")));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("prompt pool"));
        }
        Ok(Self { embeddings })
    }

    pub fn embeddings(&self) -> ArrayView3<'_, f64> {
        self.embeddings.view()
    }

    pub fn num_classes(&self) -> usize {
        self.embeddings.dim().0
    }

    pub fn prompts_per_class(&self) -> usize {
        self.embeddings.dim().1
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim().2
    }
}

/// Per-class ordered prompt indices chosen by [`select_prompts`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionSets(Vec<Vec<usize>>);

impl SelectionSets {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        for (k, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidConfig(format!("class {k} has an empty selection")));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != set.len() {
                return Err(Error::InvalidConfig(format!("class {k} selection repeats an index")));
            }
        }
        Ok(Self(sets))
    }

    /// Every prompt of every class, in index order.
    pub fn all(num_classes: usize, prompts_per_class: usize) -> Self {
        Self(vec![(0..prompts_per_class).collect(); num_classes])
    }

    pub fn get(&self, class: usize) -> &[usize] {
        &self.0[class]
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.0.iter().map(Vec::as_slice)
    }
}

/// Number of prompts kept per class: `ceil(rho * T)` clamped to `[1, T]`.
pub fn selection_size(rho: f64, prompts_per_class: usize) -> usize {
    // absorb representation error such as 0.3 * 10 = 3.0000000000000004
    let raw = (rho * prompts_per_class as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(prompts_per_class)
}

pub fn normalize_rows(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (row_idx, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm.is_nan() || norm <= NORM_EPS {
            return Err(Error::NearZeroRow { row: row_idx, norm });
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

/// Cosine similarity between every region feature and every class embedding.
pub fn detector_scores(features: ArrayView2<'_, f64>, classes: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dims(features.ncols(), classes.ncols(), "class embeddings")?;
    let v = normalize_rows(features)?;
    let t = normalize_rows(classes)?;
    Ok(v.dot(&t.t()))
}

/// Row-wise softmax of `kappa * scores`.
pub fn posterior(scores: ArrayView2<'_, f64>, kappa: f64) -> Array2<f64> {
    let mut p = scores.to_owned();
    for mut row in p.rows_mut() {
        softmax_in_place(row.view_mut(), kappa);
    }
    p
}

pub(crate) fn softmax_in_place(mut row: ndarray::ArrayViewMut1<'_, f64>, kappa: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|x| (kappa * (x - max)).exp());
    let total = row.sum();
    row.mapv_inplace(|x| x / total);
}

/// Shannon entropy (natural log) of each row; `0 ln 0` is taken as 0.
pub fn entropy(p: ArrayView2<'_, f64>) -> Array1<f64> {
    p.rows().into_iter().map(row_entropy).collect()
}

pub(crate) fn row_entropy(row: ArrayView1<'_, f64>) -> f64 {
    -row.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `(e_{k,t} + delta) / ||e_{k,t} + delta||` for the whole pool.
pub fn shifted_prompts(pool: &PromptPool, delta: ArrayView1<'_, f64>) -> Result<Array3<f64>> {
    let (k, t, d) = pool.embeddings.dim();
    check_dims(d, delta.len(), "prompt residual")?;
    let mut flat = pool.embeddings.to_shape((k * t, d)).expect("contiguous pool").to_owned();
    flat += &delta;
    let normed = normalize_rows(flat.view())?;
    Ok(normed.into_shape_with_order((k, t, d)).expect("shape preserved"))
}

/// Cosine of every region feature against every residual-shifted prompt,
/// shape `N x K x T`.
pub fn prompt_scores(
    features: ArrayView2<'_, f64>,
    pool: &PromptPool,
    delta: ArrayView1<'_, f64>,
) -> Result<Array3<f64>> {
    check_dims(features.ncols(), pool.dim(), "prompt pool")?;
    let (k, t, d) = pool.embeddings.dim();
    let e = shifted_prompts(pool, delta)?;
    let e_flat = e.into_shape_with_order((k * t, d)).expect("shape preserved");
    let v = normalize_rows(features)?;
    let z = v.dot(&e_flat.t());
    let n = z.nrows();
    Ok(z.into_shape_with_order((n, k, t)).expect("shape preserved"))
}

/// Mean prompt score over proposals, `r_{k,t}`.
pub fn image_prompt_compat(z: ArrayView3<'_, f64>) -> Array2<f64> {
    let n = z.dim().0;
    assert!(n > 0, "compatibility needs at least one proposal");
    z.sum_axis(Axis(0)) / n as f64
}

/// Top-`ceil(rho * T)` prompts per class by compatibility, descending, ties
/// to the lower index.
pub fn select_prompts(r: ArrayView2<'_, f64>, rho: f64) -> Result<SelectionSets> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1], got {rho}")));
    }
    let keep = selection_size(rho, r.ncols());
    let sets = r
        .rows()
        .into_iter()
        .map(|row| {
            let mut order = descending_order(row.iter().copied());
            order.truncate(keep);
            order
        })
        .collect();
    SelectionSets::new(sets)
}

/// `z~_{i,k}`: mean of the selected prompt scores for each proposal and class.
pub fn aggregate_selected(z: ArrayView3<'_, f64>, sel: &SelectionSets) -> Array2<f64> {
    let (n, k, _) = z.dim();
    assert_eq!(k, sel.num_classes(), "selection/class count mismatch");
    let mut out = Array2::zeros((n, k));
    for (class, set) in sel.iter().enumerate() {
        // summing in index order makes the result independent of ranking order
        let mut members = set.to_vec();
        members.sort_unstable();
        let count = members.len() as f64;
        for i in 0..n {
            let total: f64 = members.iter().map(|&t| z[[i, class, t]]).sum();
            out[[i, class]] = total / count;
        }
    }
    out
}

/// `lambda * z_tilde + (1 - lambda) * s`.
pub fn fuse(z_tilde: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, lambda: f64) -> Array2<f64> {
    assert_eq!(z_tilde.dim(), s.dim(), "fuse operands differ in shape");
    let mut g = Array2::zeros(s.dim());
    Zip::from(&mut g).and(z_tilde).and(s).for_each(|g, &a, &b| *g = lambda * a + (1.0 - lambda) * b);
    g
}

fn check_dims(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch(format!("{what} has dimension {got}, features have {expected}")));
    }
    Ok(())
}
