use serde::{Deserialize, Serialize};

use crate::adapt::{EpisodeConfig, TtaEngine};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::scene::GroundTruth;
use crate::scoring::SelectionSets;
use crate::sim::{make_suite, ProposalOrigin};

use super::config::RunConfig;

/// One connected component of the per-class IoU graph over the retained
/// proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    /// Smallest proposal index in the component.
    pub component_id: usize,
    pub class_id: usize,
    pub size: usize,
    /// Largest fused score of the component's class among its members,
    /// before the update.
    pub max_score: f64,
    pub weight: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRow {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub origin: ProposalOrigin,
    pub feature: Vec<f64>,
}

/// Everything computed in one episode, for offline inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDump {
    pub base_seed: u64,
    pub scene_index: usize,
    pub config: EpisodeConfig,
    pub proposals: Vec<ProposalRow>,
    pub ground_truth: Vec<GroundTruth>,
    pub selections: SelectionSets,
    pub top_m: Vec<usize>,
    pub clusters: Vec<ClusterRow>,
    pub loss: f64,
    pub grad_norm_phi: f64,
    pub grad_norm_delta: f64,
    pub pre_fused: Vec<Vec<f64>>,
    pub post_fused: Vec<Vec<f64>>,
    pub detections: Vec<Detection>,
}

/// Runs the configured episode on scene `scene_index` of the first seed's
/// suite.
pub fn episode_dump(cfg: &RunConfig, scene_index: usize) -> Result<EpisodeDump> {
    cfg.validate()?;
    if scene_index >= cfg.n_scenes {
        return Err(Error::InvalidConfig(format!(
            "scene index {scene_index} out of range for {} scenes",
            cfg.n_scenes
        )));
    }
    let suite = make_suite(cfg.first_seed, scene_index + 1, &cfg.sim, &cfg.shift)?;
    let scene = &suite.scenes[scene_index];
    let mut engine = TtaEngine::new(cfg.episode.clone(), cfg.sim.dim)?;
    let outcome = engine.adapt_episode_detailed(&scene.proposals, &suite.world.pool)?;

    let mut clusters: Vec<ClusterRow> = Vec::new();
    let a = &outcome.clusters;
    for local in 0..a.len() {
        let root = a.component_id[local];
        let proposal = outcome.top_m[local];
        let class_id = a.classes[local];
        let score = outcome.pre_fused[[proposal, class_id]];
        if local == root {
            clusters.push(ClusterRow {
                component_id: proposal,
                class_id,
                size: a.component_size[local],
                max_score: score,
                weight: outcome.weights[local],
                members: vec![proposal],
            });
        } else {
            let owner = outcome.top_m[root];
            let row = clusters.iter_mut().find(|c| c.members[0] == owner).expect("root visited first");
            row.max_score = row.max_score.max(score);
            row.members.push(proposal);
        }
    }
    for c in &mut clusters {
        c.members.sort_unstable();
        c.component_id = c.members[0];
    }
    clusters.sort_by_key(|c| c.component_id);

    let proposals = scene
        .proposals
        .boxes()
        .iter()
        .zip(&scene.origins)
        .zip(scene.proposals.features().rows())
        .map(|((&bbox, &origin), f)| ProposalRow { bbox, origin, feature: f.to_vec() })
        .collect();
    let rows = |m: &ndarray::Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
    let trace = &outcome.trace;
    Ok(EpisodeDump {
        base_seed: cfg.first_seed,
        scene_index,
        config: cfg.episode.clone(),
        proposals,
        ground_truth: scene.ground_truth().to_vec(),
        selections: trace.selections.clone(),
        top_m: outcome.top_m.clone(),
        clusters,
        loss: trace.loss,
        grad_norm_phi: trace.grad_norm_phi,
        grad_norm_delta: trace.grad_norm_delta,
        pre_fused: rows(&outcome.pre_fused),
        post_fused: rows(&outcome.post_fused),
        detections: trace.detections.clone(),
    })
}
