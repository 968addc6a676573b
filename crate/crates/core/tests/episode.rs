use ndarray::{Array2, Axis};

use vlodtta::adapt::{apply_adapter, postprocess, zero_shot, AdaptState, EpisodeConfig, Method, TtaEngine};
use vlodtta::cluster::{build_class_graphs, cluster_weights, predicted_classes};
use vlodtta::geometry::{top_m_filter, BBox};
use vlodtta::grad::{backward, forward_objective, forward_with_params, EpisodeConstants};
use vlodtta::scene::ProposalSet;
use vlodtta::scoring::{
    aggregate_selected, detector_scores, entropy, fuse, image_prompt_compat, posterior, prompt_scores, select_prompts,
    PromptPool, SelectionSets,
};
use vlodtta::sim::{make_suite, ShiftSpec, SimConfig, Suite};
use vlodtta::Error;

fn suite(seed: u64, n: usize) -> Suite {
    make_suite(seed, n, &SimConfig::default(), &ShiftSpec::default()).unwrap()
}

fn engine(cfg: EpisodeConfig) -> TtaEngine {
    TtaEngine::new(cfg, SimConfig::default().dim).unwrap()
}

/// Fused scores with no adaptation, built from the scoring primitives.
fn unadapted_fused(p: &ProposalSet, pool: &PromptPool, cfg: &EpisodeConfig) -> (Array2<f64>, SelectionSets) {
    let s = detector_scores(p.features(), p.class_embeddings()).unwrap();
    let z = prompt_scores(p.features(), pool, ndarray::Array1::zeros(p.dim()).view()).unwrap();
    let sel = select_prompts(image_prompt_compat(z.view()).view(), cfg.rho).unwrap();
    (fuse(aggregate_selected(z.view(), &sel).view(), s.view(), cfg.lambda), sel)
}

/// The constants an episode freezes before its step, rebuilt from scratch.
fn frozen_constants(p: &ProposalSet, pool: &PromptPool, cfg: &EpisodeConfig) -> EpisodeConstants {
    let (g, selections) = unadapted_fused(p, pool, cfg);
    let top_m = top_m_filter(g.view(), cfg.top_m);
    let classes = predicted_classes(g.select(Axis(0), &top_m).view());
    let boxes: Vec<BBox> = top_m.iter().map(|&i| p.boxes()[i]).collect();
    let clusters = build_class_graphs(&boxes, &classes, cfg.theta).unwrap();
    EpisodeConstants {
        weights: cluster_weights(&clusters, cfg.gamma),
        selections,
        lambda: cfg.lambda,
        kappa: cfg.kappa,
        top_m,
    }
}

#[test]
fn engine_returns_to_its_snapshot_after_every_episode() {
    let s = suite(1, 5);
    let mut e = engine(EpisodeConfig::default());
    let fresh = e.state().clone();
    for scene in &s.scenes {
        let (_, trace) = e.adapt_episode(&scene.proposals, &s.world.pool).unwrap();
        assert!(trace.grad_norm_phi > 0.0);
        assert!(e.state().is_at_snapshot());
        assert_eq!(e.state(), &fresh);
    }
}

#[test]
fn zero_learning_rate_reproduces_the_unadapted_pipeline() {
    let s = suite(2, 3);
    let cfg = EpisodeConfig { lr: 0.0, ..EpisodeConfig::default() };
    let mut e = engine(cfg.clone());
    for scene in &s.scenes {
        let out = e.adapt_episode_detailed(&scene.proposals, &s.world.pool).unwrap();
        assert_eq!(out.pre_fused, out.post_fused);
        let (g, sel) = unadapted_fused(&scene.proposals, &s.world.pool, &cfg);
        assert_eq!(out.pre_fused, g);
        assert_eq!(out.trace.selections, sel);
        assert_eq!(out.trace.detections, postprocess(g.view(), scene.proposals.boxes(), &cfg));
    }
}

#[test]
fn zero_shot_is_the_no_update_no_prompt_episode() {
    let s = suite(3, 3);
    let cfg = EpisodeConfig { lr: 0.0, lambda: 0.0, ..EpisodeConfig::default() };
    let mut e = engine(cfg.clone());
    for scene in &s.scenes {
        let (dets, _) = e.adapt_episode(&scene.proposals, &s.world.pool).unwrap();
        assert_eq!(dets, zero_shot(&scene.proposals, &cfg).unwrap());
        let via_run = engine(EpisodeConfig::default()).run(Method::ZeroShot, &scene.proposals, &s.world.pool).unwrap();
        assert_eq!(dets, via_run);
    }
}

#[test]
fn entropy_method_minimizes_the_unweighted_detector_entropy() {
    let s = suite(4, 3);
    let base = EpisodeConfig::default();
    let cfg = Method::EntropyAdapter.episode_config(&base);
    assert_eq!((cfg.gamma, cfg.lambda), (0.0, 0.0));
    let mut e = engine(cfg.clone());
    for scene in &s.scenes {
        let p = &scene.proposals;
        let (_, trace) = e.adapt_episode(p, &s.world.pool).unwrap();
        let scores = detector_scores(p.features(), p.class_embeddings()).unwrap();
        let top = top_m_filter(scores.view(), cfg.top_m);
        let h = entropy(posterior(scores.select(Axis(0), &top).view(), cfg.kappa).view());
        let mean = h.sum() / h.len() as f64;
        assert!((trace.loss - mean).abs() < 1e-12, "{} vs {mean}", trace.loss);
        assert_eq!(trace.grad_norm_delta, 0.0);
    }
}

#[test]
fn prompt_averaging_uses_the_whole_pool() {
    let s = suite(5, 3);
    let cfg = Method::PromptAverage.episode_config(&EpisodeConfig::default());
    let mut e = engine(cfg.clone());
    for scene in &s.scenes {
        let p = &scene.proposals;
        let out = e.adapt_episode_detailed(p, &s.world.pool).unwrap();
        let t = s.world.pool.prompts_per_class();
        for set in out.trace.selections.iter() {
            let mut sorted = set.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..t).collect::<Vec<_>>());
        }
        let z = prompt_scores(p.features(), &s.world.pool, ndarray::Array1::zeros(p.dim()).view()).unwrap();
        let mean = z.mean_axis(Axis(2)).unwrap();
        let s_det = detector_scores(p.features(), p.class_embeddings()).unwrap();
        let g = fuse(mean.view(), s_det.view(), cfg.lambda);
        let gap = (&g - &out.post_fused).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(gap < 1e-12, "{gap}");
    }
}

#[test]
fn episodes_are_deterministic_and_order_independent() {
    let s = suite(6, 4);
    let pool = &s.world.pool;
    let mut a = engine(EpisodeConfig::default());
    let mut b = engine(EpisodeConfig::default());
    let forward: Vec<_> = s.scenes.iter().map(|g| a.adapt_episode(&g.proposals, pool).unwrap()).collect();
    let mut backward: Vec<_> = s.scenes.iter().rev().map(|g| b.adapt_episode(&g.proposals, pool).unwrap()).collect();
    backward.reverse();
    assert_eq!(forward, backward);
    let again = a.adapt_episode(&s.scenes[2].proposals, pool).unwrap();
    assert_eq!(again, forward[2]);
}

#[test]
fn step_uses_constants_frozen_before_the_update() {
    let s = suite(7, 3);
    let cfg = EpisodeConfig::default();
    let mut e = engine(cfg.clone());
    for scene in &s.scenes {
        let p = &scene.proposals;
        let out = e.adapt_episode_detailed(p, &s.world.pool).unwrap();
        let c = frozen_constants(p, &s.world.pool, &cfg);
        assert_eq!(out.top_m, c.top_m);
        assert_eq!(out.weights, c.weights);
        assert_eq!(out.trace.selections, c.selections);

        // replay the step and rescore with the same selections
        let mut state = AdaptState::zero_init(p.dim(), cfg.reduction, cfg.adapter_seed).unwrap();
        let (loss, tape) = forward_objective(p, &s.world.pool, &state, &c).unwrap();
        assert_eq!(loss, out.trace.loss);
        let grads = backward(&tape);
        state.phi.descend(&grads.phi, cfg.lr);
        state.delta.scaled_add(-cfg.lr, &grads.delta);
        let adapted = apply_adapter(p.features(), &state.phi).unwrap();
        let s_det = detector_scores(adapted.view(), p.class_embeddings()).unwrap();
        let z = prompt_scores(adapted.view(), &s.world.pool, state.delta.view()).unwrap();
        let g = fuse(aggregate_selected(z.view(), &c.selections).view(), s_det.view(), cfg.lambda);
        assert_eq!(g, out.post_fused);
    }
}

#[test]
fn gradient_step_descends_for_a_small_enough_rate() {
    let s = suite(8, 6);
    let cfg = EpisodeConfig::default();
    for scene in &s.scenes {
        let p = &scene.proposals;
        let c = frozen_constants(p, &s.world.pool, &cfg);
        let state = AdaptState::zero_init(p.dim(), cfg.reduction, cfg.adapter_seed).unwrap();
        let (loss, tape) = forward_objective(p, &s.world.pool, &state, &c).unwrap();
        let grads = backward(&tape);
        let descended = (0..=20).any(|halvings| {
            let lr = cfg.lr / f64::powi(2.0, halvings);
            let mut phi = state.phi.clone();
            phi.descend(&grads.phi, lr);
            let mut delta = state.delta.clone();
            delta.scaled_add(-lr, &grads.delta);
            forward_with_params(p, &s.world.pool, &phi, delta.view(), &c).unwrap().0 < loss
        });
        assert!(descended);
    }
}

#[test]
fn empty_image_is_reported() {
    let s = suite(9, 1);
    let d = SimConfig::default().dim;
    let empty =
        ProposalSet::new(vec![], Array2::zeros((0, d)), s.scenes[0].proposals.class_embeddings().to_owned()).unwrap();
    let mut e = engine(EpisodeConfig::default());
    assert_eq!(e.adapt_episode(&empty, &s.world.pool).unwrap_err(), Error::EmptyImage);
    assert_eq!(e.run(Method::ZeroShot, &empty, &s.world.pool).unwrap_err(), Error::EmptyImage);
    assert!(e.state().is_at_snapshot());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let s = suite(10, 1);
    let mut e = TtaEngine::new(EpisodeConfig::default(), 64).unwrap();
    assert!(matches!(e.adapt_episode(&s.scenes[0].proposals, &s.world.pool), Err(Error::ShapeMismatch(_))));
    assert!(TtaEngine::new(EpisodeConfig::default(), 30).is_err());
}

#[test]
fn fresh_adapter_is_the_identity() {
    let s = suite(11, 1);
    let f = s.scenes[0].proposals.features();
    let state = AdaptState::zero_init(f.ncols(), 16, 99).unwrap();
    assert_eq!(apply_adapter(f, &state.phi).unwrap(), f);
}
