use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::adapt::adapter::{apply_adapter, hidden_width, AdaptState};
use crate::cluster::{build_class_graphs, cluster_weights, predicted_classes, ClusterAssignment};
use crate::error::{Error, Result};
use crate::geometry::{nms, top_m_filter, BBox, Detection};
use crate::grad::{backward, forward_objective, EpisodeConstants};
use crate::scene::ProposalSet;
use crate::scoring::{
    aggregate_selected, detector_scores, fuse, image_prompt_compat, posterior, prompt_scores, select_prompts,
    PromptPool, SelectionSets,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Exponent on component size in the entropy weights.
    pub gamma: f64,
    /// IoU at or above which same-class proposals are linked.
    pub theta: f64,
    /// Fraction of each class's prompts kept by selection.
    pub rho: f64,
    /// Weight of the prompt-ensemble score in the fused score.
    pub lambda: f64,
    /// Proposals entering the loss.
    pub top_m: usize,
    /// Softmax scale on cosine scores.
    pub kappa: f64,
    /// Step size of the single gradient step.
    pub lr: f64,
    pub nms_iou: f64,
    pub score_thresh: f64,
    /// Adapter bottleneck reduction factor.
    pub reduction: usize,
    /// Seed of the adapter's down-projection.
    pub adapter_seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            gamma: crate::cluster::DEFAULT_GAMMA,
            theta: crate::cluster::DEFAULT_THETA,
            rho: 0.25,
            lambda: 0.3,
            top_m: 600,
            kappa: 20.0,
            lr: 1e-2,
            nms_iou: crate::geometry::DEFAULT_NMS_IOU,
            score_thresh: crate::geometry::DEFAULT_SCORE_THRESH,
            reduction: 16,
            adapter_seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(what.to_string()))
            }
        };
        check(self.gamma.is_finite() && self.gamma >= 0.0, "gamma must be finite and >= 0")?;
        check((0.0..=1.0).contains(&self.theta), "theta must lie in [0, 1]")?;
        check(self.rho > 0.0 && self.rho <= 1.0, "rho must lie in (0, 1]")?;
        check((0.0..=1.0).contains(&self.lambda), "lambda must lie in [0, 1]")?;
        check(self.top_m >= 1, "top_m must be at least 1")?;
        check(self.kappa.is_finite() && self.kappa > 0.0, "kappa must be finite and > 0")?;
        check(self.lr.is_finite() && self.lr >= 0.0, "lr must be finite and >= 0")?;
        check((0.0..=1.0).contains(&self.nms_iou), "nms_iou must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.score_thresh), "score_thresh must lie in [0, 1]")?;
        check(self.reduction >= 1, "reduction must be at least 1")
    }
}

/// Inference variants compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Detector scores only, no adaptation.
    #[serde(rename = "zs")]
    ZeroShot,
    /// Plain mean entropy on detector scores, adapter step retained.
    #[serde(rename = "entropy")]
    EntropyAdapter,
    /// All prompts averaged and fused, no adaptation.
    #[serde(rename = "pa")]
    PromptAverage,
    /// Weighted entropy with prompt selection.
    #[serde(rename = "vlodtta")]
    VlodTta,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::ZeroShot, Method::EntropyAdapter, Method::PromptAverage, Method::VlodTta];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ZeroShot => "zs",
            Method::EntropyAdapter => "entropy",
            Method::PromptAverage => "pa",
            Method::VlodTta => "vlodtta",
        }
    }

    /// The episode configuration this method runs with.
    pub fn episode_config(&self, base: &EpisodeConfig) -> EpisodeConfig {
        match self {
            Method::ZeroShot => EpisodeConfig { lr: 0.0, lambda: 0.0, ..base.clone() },
            Method::EntropyAdapter => EpisodeConfig { gamma: 0.0, lambda: 0.0, ..base.clone() },
            Method::PromptAverage => EpisodeConfig { rho: 1.0, lr: 0.0, ..base.clone() },
            Method::VlodTta => base.clone(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}; expected zs, entropy, pa or vlodtta")))
    }
}

/// Summary of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub loss: f64,
    pub grad_norm_phi: f64,
    pub grad_norm_delta: f64,
    pub selections: SelectionSets,
    pub cluster_count: usize,
    /// Component size -> number of components.
    pub cluster_size_histogram: BTreeMap<usize, usize>,
    /// `[min, max]` of the fused scores before the step.
    pub pre_fused: [f64; 2],
    /// `[min, max]` of the fused scores after the step.
    pub post_fused: [f64; 2],
    pub detections: Vec<Detection>,
}

/// Everything an episode computed, for inspection dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub pre_fused: Array2<f64>,
    pub post_fused: Array2<f64>,
    /// Proposal indices entering the loss.
    pub top_m: Vec<usize>,
    /// Components over the `top_m` proposals, in `top_m` order.
    pub clusters: ClusterAssignment,
    pub weights: Vec<f64>,
}

impl EpisodeOutcome {
    pub fn detections(&self) -> &[Detection] {
        &self.trace.detections
    }
}

/// Fused scores for the given parameters; selects prompts when `selections`
/// is `None`.
fn fused_scores(
    proposals: &ProposalSet,
    pool: &PromptPool,
    state: &AdaptState,
    cfg: &EpisodeConfig,
    selections: Option<&SelectionSets>,
) -> Result<(Array2<f64>, SelectionSets)> {
    let adapted = apply_adapter(proposals.features(), &state.phi)?;
    let s = detector_scores(adapted.view(), proposals.class_embeddings())?;
    let z = prompt_scores(adapted.view(), pool, state.delta.view())?;
    let sel = match selections {
        Some(sel) => sel.clone(),
        None => select_prompts(image_prompt_compat(z.view()).view(), cfg.rho)?,
    };
    let z_tilde = aggregate_selected(z.view(), &sel);
    Ok((fuse(z_tilde.view(), s.view(), cfg.lambda), sel))
}

/// Thresholded, class-wise suppressed detections from fused scores. A
/// proposal's class is its argmax; its confidence the posterior of that class.
pub fn postprocess(scores: ArrayView2<'_, f64>, boxes: &[BBox], cfg: &EpisodeConfig) -> Vec<Detection> {
    let p = posterior(scores, cfg.kappa);
    let classes = predicted_classes(scores);
    let candidates: Vec<Detection> = classes
        .iter()
        .enumerate()
        .filter_map(|(i, &class_id)| {
            let score = p[[i, class_id]];
            (score >= cfg.score_thresh).then_some(Detection { bbox: boxes[i], class_id, score })
        })
        .collect();
    nms(&candidates, cfg.nms_iou, true)
}

/// Detections from raw detector scores, with no prompts and no adaptation.
pub fn zero_shot(proposals: &ProposalSet, cfg: &EpisodeConfig) -> Result<Vec<Detection>> {
    if proposals.is_empty() {
        return Err(Error::EmptyImage);
    }
    let s = detector_scores(proposals.features(), proposals.class_embeddings())?;
    Ok(postprocess(s.view(), proposals.boxes(), cfg))
}

fn extrema(m: &Array2<f64>) -> [f64; 2] {
    m.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &x| [lo.min(x), hi.max(x)])
}

/// Adapter and prompt residual for one image at a time, reset after each
/// episode.
#[derive(Debug, Clone)]
pub struct TtaEngine {
    cfg: EpisodeConfig,
    state: AdaptState,
}

impl TtaEngine {
    pub fn new(cfg: EpisodeConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        hidden_width(dim, cfg.reduction)?;
        let state = AdaptState::zero_init(dim, cfg.reduction, cfg.adapter_seed)?;
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AdaptState {
        &self.state
    }

    pub fn adapt_episode(
        &mut self,
        proposals: &ProposalSet,
        pool: &PromptPool,
    ) -> Result<(Vec<Detection>, EpisodeTrace)> {
        let outcome = self.adapt_episode_detailed(proposals, pool)?;
        Ok((outcome.trace.detections.clone(), outcome.trace))
    }

    pub fn adapt_episode_detailed(&mut self, proposals: &ProposalSet, pool: &PromptPool) -> Result<EpisodeOutcome> {
        let cfg = self.cfg.clone();
        self.episode_with(&cfg, proposals, pool)
    }

    /// Detections of `method` on one image.
    pub fn run(&mut self, method: Method, proposals: &ProposalSet, pool: &PromptPool) -> Result<Vec<Detection>> {
        let cfg = method.episode_config(&self.cfg);
        if method == Method::ZeroShot {
            return zero_shot(proposals, &cfg);
        }
        Ok(self.episode_with(&cfg, proposals, pool)?.trace.detections)
    }

    fn episode_with(
        &mut self,
        cfg: &EpisodeConfig,
        proposals: &ProposalSet,
        pool: &PromptPool,
    ) -> Result<EpisodeOutcome> {
        cfg.validate()?;
        if proposals.dim() != self.state.dim() {
            return Err(Error::ShapeMismatch(format!(
                "engine built for dimension {}, proposals have {}",
                self.state.dim(),
                proposals.dim()
            )));
        }
        if pool.num_classes() != proposals.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "prompt pool has {} classes, proposals {}",
                pool.num_classes(),
                proposals.num_classes()
            )));
        }
        if proposals.is_empty() {
            return Err(Error::EmptyImage);
        }
        if !self.state.is_at_snapshot() {
            self.state.reset();
        }
        let result = self.step(cfg, proposals, pool);
        self.state.reset();
        result
    }

    fn step(&mut self, cfg: &EpisodeConfig, proposals: &ProposalSet, pool: &PromptPool) -> Result<EpisodeOutcome> {
        let (pre_fused, selections) = fused_scores(proposals, pool, &self.state, cfg, None)?;

        let top_m = top_m_filter(pre_fused.view(), cfg.top_m);
        let retained = pre_fused.select(ndarray::Axis(0), &top_m);
        let classes = predicted_classes(retained.view());
        let boxes: Vec<BBox> = top_m.iter().map(|&i| proposals.boxes()[i]).collect();
        let clusters = build_class_graphs(&boxes, &classes, cfg.theta)?;
        let weights = cluster_weights(&clusters, cfg.gamma);

        let constants = EpisodeConstants {
            weights: weights.clone(),
            selections: selections.clone(),
            lambda: cfg.lambda,
            kappa: cfg.kappa,
            top_m: top_m.clone(),
        };
        let (loss, tape) = forward_objective(proposals, pool, &self.state, &constants)?;
        let grads = backward(&tape);
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.state.phi.descend(&grads.phi, cfg.lr);
        self.state.delta.scaled_add(-cfg.lr, &grads.delta);

        let (post_fused, _) = fused_scores(proposals, pool, &self.state, cfg, Some(&selections))?;
        let detections = postprocess(post_fused.view(), proposals.boxes(), cfg);

        let trace = EpisodeTrace {
            loss,
            grad_norm_phi: grads.phi_norm(),
            grad_norm_delta: grads.delta_norm(),
            selections,
            cluster_count: clusters.num_components(),
            cluster_size_histogram: clusters.size_histogram(),
            pre_fused: extrema(&pre_fused),
            post_fused: extrema(&post_fused),
            detections,
        };
        Ok(EpisodeOutcome { trace, pre_fused, post_fused, top_m, clusters, weights })
    }
}
