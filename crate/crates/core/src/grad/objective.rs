use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::adapt::adapter::{AdaptState, AdapterParams};
use crate::error::{Error, Result};
use crate::scene::ProposalSet;
use crate::scoring::{normalize_rows, PromptPool, SelectionSets};

use super::ops;

/// Quantities fixed before the gradient step and held constant through it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConstants {
    /// Cluster weights, aligned with `top_m`.
    pub weights: Vec<f64>,
    pub selections: SelectionSets,
    pub lambda: f64,
    pub kappa: f64,
    /// Proposal indices entering the loss.
    pub top_m: Vec<usize>,
}

/// Inputs and intermediate values of one forward pass of the objective.
#[derive(Debug, Clone)]
pub struct Tape {
    // inputs
    features: Array2<f64>,
    class_unit: Array2<f64>,
    prompts: Array2<f64>,
    groups: Vec<Vec<usize>>,
    phi: AdapterParams,
    delta: Array1<f64>,
    weights: Array1<f64>,
    lambda: f64,
    kappa: f64,
    // intermediates
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
    adapted_unit: Array2<f64>,
    adapted_norm: Array1<f64>,
    prompt_unit: Array2<f64>,
    prompt_norm: Array1<f64>,
    posterior: Array2<f64>,
    entropy: Array1<f64>,
    loss: f64,
}

impl Tape {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn entropies(&self) -> ArrayView1<'_, f64> {
        self.entropy.view()
    }

    pub fn posterior(&self) -> &Array2<f64> {
        &self.posterior
    }

    /// Re-runs the forward pass from the recorded inputs.
    pub fn replay(&self) -> Result<f64> {
        let fresh = run_forward(
            self.features.clone(),
            self.class_unit.clone(),
            self.prompts.clone(),
            self.groups.clone(),
            &self.phi,
            self.delta.view(),
            self.weights.clone(),
            self.lambda,
            self.kappa,
        )?;
        Ok(fresh.loss)
    }
}

/// Gradients of the objective, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub phi: AdapterParams,
    pub delta: Array1<f64>,
}

impl Gradients {
    pub fn phi_norm(&self) -> f64 {
        self.phi.l2_norm()
    }

    pub fn delta_norm(&self) -> f64 {
        self.delta.dot(&self.delta).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.to_flat().iter().chain(self.delta.iter()).all(|x| x.is_finite())
    }
}

pub fn forward_objective(
    proposals: &ProposalSet,
    pool: &PromptPool,
    state: &AdaptState,
    constants: &EpisodeConstants,
) -> Result<(f64, Tape)> {
    forward_with_params(proposals, pool, &state.phi, state.delta.view(), constants)
}

pub fn forward_with_params(
    proposals: &ProposalSet,
    pool: &PromptPool,
    phi: &AdapterParams,
    delta: ArrayView1<'_, f64>,
    constants: &EpisodeConstants,
) -> Result<(f64, Tape)> {
    if constants.weights.len() != constants.top_m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} retained proposals",
            constants.weights.len(),
            constants.top_m.len()
        )));
    }
    if constants.selections.num_classes() != proposals.num_classes() {
        return Err(Error::ShapeMismatch("selection sets do not cover every class".into()));
    }
    if phi.dim() != proposals.dim() || delta.len() != proposals.dim() || pool.dim() != proposals.dim() {
        return Err(Error::ShapeMismatch("parameter and feature dimensions differ".into()));
    }
    let features = proposals.features().select(Axis(0), &constants.top_m);
    let class_unit = normalize_rows(proposals.class_embeddings())?;

    // gather the selected prompts, class by class in index order
    let e = pool.embeddings();
    let mut rows = Vec::new();
    let mut groups = Vec::with_capacity(constants.selections.num_classes());
    for (k, set) in constants.selections.iter().enumerate() {
        let mut members = set.to_vec();
        members.sort_unstable();
        let mut cols = Vec::with_capacity(members.len());
        for t in members {
            cols.push(rows.len());
            rows.push(e.slice(ndarray::s![k, t, ..]).to_owned());
        }
        groups.push(cols);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let prompts = ndarray::stack(Axis(0), &views).expect("prompt rows share a dimension");

    let tape = run_forward(
        features,
        class_unit,
        prompts,
        groups,
        phi,
        delta,
        Array1::from(constants.weights.clone()),
        constants.lambda,
        constants.kappa,
    )?;
    Ok((tape.loss, tape))
}

#[allow(clippy::too_many_arguments)]
fn run_forward(
    features: Array2<f64>,
    class_unit: Array2<f64>,
    prompts: Array2<f64>,
    groups: Vec<Vec<usize>>,
    phi: &AdapterParams,
    delta: ArrayView1<'_, f64>,
    weights: Array1<f64>,
    lambda: f64,
    kappa: f64,
) -> Result<Tape> {
    let total: f64 = weights.sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateWeights(total));
    }
    // adapter: x + GELU(x W_down + b_down) W_up + b_up
    let pre_act = ops::add_row_bias(ops::matmul(features.view(), phi.w_down.view()).view(), phi.b_down.view());
    let hidden = ops::gelu_forward(pre_act.view());
    let branch = ops::add_row_bias(ops::matmul(hidden.view(), phi.w_up.view()).view(), phi.b_up.view());
    let adapted = &features + &branch;
    let (adapted_unit, adapted_norm) = ops::normalize_forward(adapted.view())?;

    let detector = ops::matmul(adapted_unit.view(), class_unit.t());

    let shifted = ops::add_row_bias(prompts.view(), delta);
    let (prompt_unit, prompt_norm) = ops::normalize_forward(shifted.view())?;
    let prompt_scores = ops::matmul(adapted_unit.view(), prompt_unit.t());
    let aggregated = ops::group_mean(prompt_scores.view(), &groups);

    let fused = ops::convex(aggregated.view(), detector.view(), lambda);
    let (posterior, entropy) = ops::softmax_entropy(fused.view(), kappa);
    let loss = ops::weighted_mean(entropy.view(), weights.view());

    Ok(Tape {
        features,
        class_unit,
        prompts,
        groups,
        phi: phi.clone(),
        delta: delta.to_owned(),
        weights,
        lambda,
        kappa,
        pre_act,
        hidden,
        adapted_unit,
        adapted_norm,
        prompt_unit,
        prompt_norm,
        posterior,
        entropy,
        loss,
    })
}

/// Selects the backward formulas. Anything but `Exact` is a deliberately
/// broken rule used to show that the finite-difference check detects errors.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardVariant {
    Exact,
    /// Feature normalization backward without the tangent projection.
    DropNormalizeProjection,
}

pub fn backward(tape: &Tape) -> Gradients {
    backward_variant(tape, BackwardVariant::Exact)
}

#[doc(hidden)]
pub fn backward_variant(tape: &Tape, variant: BackwardVariant) -> Gradients {
    let d_entropy = ops::weighted_mean_backward(tape.weights.view(), 1.0);
    let d_fused =
        ops::softmax_entropy_backward(tape.posterior.view(), tape.entropy.view(), d_entropy.view(), tape.kappa);
    let (d_aggregated, d_detector) = ops::convex_backward(d_fused.view(), tape.lambda);

    let d_prompt_scores = ops::group_mean_backward(d_aggregated.view(), &tape.groups, tape.prompts.nrows());
    // prompt_scores = V^ E^T
    let (mut d_adapted_unit, d_prompt_unit_t) =
        ops::matmul_backward(tape.adapted_unit.view(), tape.prompt_unit.t(), d_prompt_scores.view());
    let d_prompt_unit = d_prompt_unit_t.t().to_owned();
    let d_shifted = ops::normalize_backward(tape.prompt_unit.view(), tape.prompt_norm.view(), d_prompt_unit.view());
    let d_delta = ops::add_row_bias_backward(d_shifted.view());

    // detector = V^ T^T; the class embeddings are fixed
    d_adapted_unit += &d_detector.dot(&tape.class_unit);

    let d_adapted = match variant {
        BackwardVariant::Exact => {
            ops::normalize_backward(tape.adapted_unit.view(), tape.adapted_norm.view(), d_adapted_unit.view())
        }
        BackwardVariant::DropNormalizeProjection => {
            let norms = tape.adapted_norm.view().insert_axis(Axis(1));
            &d_adapted_unit / &norms
        }
    };

    let d_b_up = ops::add_row_bias_backward(d_adapted.view());
    let (d_hidden, d_w_up) = ops::matmul_backward(tape.hidden.view(), tape.phi.w_up.view(), d_adapted.view());
    let d_pre = ops::gelu_backward(tape.pre_act.view(), d_hidden.view());
    let d_b_down = ops::add_row_bias_backward(d_pre.view());
    let (_, d_w_down) = ops::matmul_backward(tape.features.view(), tape.phi.w_down.view(), d_pre.view());

    let mut phi = tape.phi.zeros_like();
    phi.w_down = d_w_down;
    phi.b_down = d_b_down;
    phi.w_up = d_w_up;
    phi.b_up = d_b_up;
    Gradients { phi, delta: d_delta }
}

/// Per-block maxima of `|analytic - numeric| / max(1, |numeric|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub phi: f64,
    pub delta: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.phi.max(self.delta)
    }
}

/// Central-difference check of every coordinate of phi and delta.
pub fn fd_check(
    proposals: &ProposalSet,
    pool: &PromptPool,
    state: &AdaptState,
    constants: &EpisodeConstants,
    eps: f64,
) -> Result<FdReport> {
    fd_check_with(proposals, pool, state, constants, eps, BackwardVariant::Exact)
}

#[doc(hidden)]
pub fn fd_check_with(
    proposals: &ProposalSet,
    pool: &PromptPool,
    state: &AdaptState,
    constants: &EpisodeConstants,
    eps: f64,
    variant: BackwardVariant,
) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (_, tape) = forward_objective(proposals, pool, state, constants)?;
    let grads = backward_variant(&tape, variant);

    let loss_at = |phi: &AdapterParams, delta: &Array1<f64>| -> Result<f64> {
        Ok(forward_with_params(proposals, pool, phi, delta.view(), constants)?.0)
    };
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / numeric.abs().max(1.0);

    let base = state.phi.to_flat();
    let analytic = grads.phi.to_flat();
    let mut probe = base.clone();
    let mut phi_err: f64 = 0.0;
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let up = loss_at(&state.phi.from_flat(&probe), &state.delta)?;
        probe[i] = base[i] - eps;
        let down = loss_at(&state.phi.from_flat(&probe), &state.delta)?;
        probe[i] = base[i];
        phi_err = phi_err.max(rel(analytic[i], (up - down) / (2.0 * eps)));
    }

    let mut delta = state.delta.clone();
    let mut delta_err: f64 = 0.0;
    for j in 0..delta.len() {
        let orig = delta[j];
        delta[j] = orig + eps;
        let up = loss_at(&state.phi, &delta)?;
        delta[j] = orig - eps;
        let down = loss_at(&state.phi, &delta)?;
        delta[j] = orig;
        delta_err = delta_err.max(rel(grads.delta[j], (up - down) / (2.0 * eps)));
    }
    Ok(FdReport { phi: phi_err, delta: delta_err })
}
