//! Differentiable primitives of the episode objective.
//!
//! Each primitive is a forward function plus a backward function mapping the
//! upstream gradient to gradients of its inputs. Backward functions take the
//! forward intermediates they need explicitly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::adapt::adapter::{gelu, gelu_grad};
use crate::error::Result;
use crate::scoring::{normalize_rows, row_entropy, softmax_in_place};

pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    a.dot(&b)
}

/// Returns `(dA, dB)` for `C = A B`.
pub fn matmul_backward(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    dc: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    (dc.dot(&b.t()), a.t().dot(&dc))
}

/// `x + b` with `b` broadcast over rows.
pub fn add_row_bias(x: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = x.to_owned();
    y += &b.insert_axis(Axis(0));
    y
}

/// Bias gradient: column sums of the upstream gradient. The input gradient is
/// the upstream gradient itself.
pub fn add_row_bias_backward(dy: ArrayView2<'_, f64>) -> Array1<f64> {
    dy.sum_axis(Axis(0))
}

pub fn gelu_forward(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.mapv(gelu)
}

pub fn gelu_backward(x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &x, &g| *d = g * gelu_grad(x));
    dx
}

/// Unit rows and the original row norms.
pub fn normalize_forward(x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let unit = normalize_rows(x)?;
    let norms = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    Ok((unit, norms))
}

/// `dx = (I - x^ x^T) dy / ||x||`, row by row.
pub fn normalize_backward(
    unit: ArrayView2<'_, f64>,
    norms: ArrayView1<'_, f64>,
    dy: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let mut dx = dy.to_owned();
    for ((mut row, u), &n) in dx.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        let along = u.dot(&row);
        row.scaled_add(-along, &u);
        row.mapv_inplace(|x| x / n);
    }
    dx
}

/// Per-group mean of columns: `out[i, g] = mean_{c in groups[g]} z[i, c]`.
pub fn group_mean(z: ArrayView2<'_, f64>, groups: &[Vec<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros((z.nrows(), groups.len()));
    for (g, cols) in groups.iter().enumerate() {
        let count = cols.len() as f64;
        for (i, row) in z.rows().into_iter().enumerate() {
            let total: f64 = cols.iter().map(|&c| row[c]).sum();
            out[[i, g]] = total / count;
        }
    }
    out
}

pub fn group_mean_backward(dout: ArrayView2<'_, f64>, groups: &[Vec<usize>], ncols: usize) -> Array2<f64> {
    let mut dz = Array2::zeros((dout.nrows(), ncols));
    for (g, cols) in groups.iter().enumerate() {
        let count = cols.len() as f64;
        for i in 0..dout.nrows() {
            let share = dout[[i, g]] / count;
            for &c in cols {
                dz[[i, c]] += share;
            }
        }
    }
    dz
}

/// `lambda * a + (1 - lambda) * b`.
pub fn convex(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, lambda: f64) -> Array2<f64> {
    crate::scoring::fuse(a, b, lambda)
}

pub fn convex_backward(dy: ArrayView2<'_, f64>, lambda: f64) -> (Array2<f64>, Array2<f64>) {
    (dy.mapv(|g| lambda * g), dy.mapv(|g| (1.0 - lambda) * g))
}

/// Row-wise `p = softmax(kappa * g)` and `H = -sum p ln p`.
pub fn softmax_entropy(g: ArrayView2<'_, f64>, kappa: f64) -> (Array2<f64>, Array1<f64>) {
    let mut p = g.to_owned();
    for row in p.rows_mut() {
        softmax_in_place(row, kappa);
    }
    let h = p.rows().into_iter().map(row_entropy).collect();
    (p, h)
}

/// `dg_j = dH * (-kappa p_j (ln p_j + H))`; terms with `p_j = 0` vanish.
pub fn softmax_entropy_backward(
    p: ArrayView2<'_, f64>,
    h: ArrayView1<'_, f64>,
    dh: ArrayView1<'_, f64>,
    kappa: f64,
) -> Array2<f64> {
    let mut dg = Array2::zeros(p.raw_dim());
    for (i, (mut out, row)) in dg.rows_mut().into_iter().zip(p.rows()).enumerate() {
        for (o, &pj) in out.iter_mut().zip(row) {
            if pj > 0.0 {
                *o = -dh[i] * kappa * pj * (pj.ln() + h[i]);
            }
        }
    }
    dg
}

/// `sum(w h) / sum(w)`.
pub fn weighted_mean(h: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    let total: f64 = w.sum();
    h.dot(&w) / total
}

pub fn weighted_mean_backward(w: ArrayView1<'_, f64>, dl: f64) -> Array1<f64> {
    let total: f64 = w.sum();
    w.mapv(|x| dl * x / total)
}
