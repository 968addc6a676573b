use ndarray::{array, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vlodtta::adapt::AdaptState;
use vlodtta::geometry::BBox;
use vlodtta::grad::{backward, fd_check, fd_check_with, forward_objective, BackwardVariant, EpisodeConstants};
use vlodtta::oracle::{random_boxes, random_grad_instance, random_unit_rows};
use vlodtta::scene::ProposalSet;
use vlodtta::scoring::{detector_scores, entropy, posterior, PromptPool, SelectionSets};

/// Fixed instance whose loss was evaluated independently at 40 digits by
/// `tools/objective_reference.py`.
fn golden() -> (ProposalSet, PromptPool, AdaptState, EpisodeConstants) {
    let features = array![
        [0.2502, 0.7944, 0.5514],
        [-0.5496, -0.3997, 0.7471],
        [-0.9895, 0.6425, 0.5941],
        [-0.0641, -0.3939, -0.4431]
    ];
    let classes = array![[-0.4903, -0.1098, 0.0091], [0.107, 0.991, 0.5853]];
    let pool = Array3::from_shape_vec(
        (2, 2, 3),
        vec![0.2444, 0.9779, -0.5694, -0.6796, 0.2251, -0.9121, -0.9286, 0.0298, -0.0676, 0.8343, 0.2585, 0.0282],
    )
    .unwrap();
    let b = |x1, y1, x2, y2| BBox::new(x1, y1, x2, y2).unwrap();
    let proposals = ProposalSet::new(
        vec![b(0., 0., 10., 10.), b(1., 0., 11., 10.), b(30., 30., 40., 42.), b(2., 1., 12., 11.)],
        features,
        classes,
    )
    .unwrap();
    let mut state = AdaptState::zero_init(3, 3, 0).unwrap();
    state.phi.w_down = array![[-0.0063], [-0.505], [-0.9764]];
    state.phi.b_down = array![-0.6152];
    state.phi.w_up = array![[0.3841, -0.5988, -0.2609]];
    state.phi.b_up = array![-0.49625, 0.33005, -0.34555];
    state.delta = array![-0.2324, 0.38035, 0.0098];
    let big = 3f64.powf(1.1);
    let constants = EpisodeConstants {
        weights: vec![1.0, big, big],
        selections: SelectionSets::new(vec![vec![1], vec![0, 1]]).unwrap(),
        lambda: 0.3,
        kappa: 5.0,
        top_m: vec![2, 0, 3],
    };
    (proposals, PromptPool::new(pool).unwrap(), state, constants)
}

#[test]
fn golden_loss_matches_extended_precision() {
    let (p, pool, state, c) = golden();
    let (loss, _) = forward_objective(&p, &pool, &state, &c).unwrap();
    let reference = 0.160_430_858_490_655_66;
    assert!((loss - reference).abs() < 1e-12, "{loss} vs {reference}");
}

#[test]
fn golden_gradients_match_finite_differences() {
    let (p, pool, state, c) = golden();
    let report = fd_check(&p, &pool, &state, &c, 1e-5).unwrap();
    assert!(report.max() <= 1e-6, "{report:?}");
}

#[test]
fn replay_is_bit_exact_and_deterministic() {
    let (p, pool, state, c) = golden();
    let (loss, tape) = forward_objective(&p, &pool, &state, &c).unwrap();
    assert_eq!(tape.replay().unwrap().to_bits(), loss.to_bits());
    let (again, tape2) = forward_objective(&p, &pool, &state, &c).unwrap();
    assert_eq!(again.to_bits(), loss.to_bits());
    assert_eq!(backward(&tape), backward(&tape2));
}

fn sized_instance(
    seed: u64,
    n: usize,
    k: usize,
    t: usize,
    d: usize,
    r: usize,
) -> (ProposalSet, PromptPool, AdaptState, EpisodeConstants) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proposals =
        ProposalSet::new(random_boxes(&mut rng, n), random_unit_rows(&mut rng, n, d), random_unit_rows(&mut rng, k, d))
            .unwrap();
    let flat = random_unit_rows(&mut rng, k * t, d).into_raw_vec_and_offset().0;
    let pool = PromptPool::new(Array3::from_shape_vec((k, t, d), flat).unwrap()).unwrap();
    let mut state = AdaptState::zero_init(d, r, seed).unwrap();
    state.phi.w_up = random_unit_rows(&mut rng, d / r, d) * 0.4;
    state.phi.b_up = random_unit_rows(&mut rng, 1, d).row(0).to_owned() * 0.2;
    state.delta = random_unit_rows(&mut rng, 1, d).row(0).to_owned() * 0.2;
    let constants = EpisodeConstants {
        weights: (0..n).map(|i| (1 + i % 4) as f64).collect(),
        selections: SelectionSets::new(
            (0..k)
                .map(|c| vec![c % t, (c + 1) % t])
                .map(|mut s| {
                    s.dedup();
                    s
                })
                .collect(),
        )
        .unwrap(),
        lambda: 0.3,
        kappa: 20.0,
        top_m: (0..n).collect(),
    };
    (proposals, pool, state, constants)
}

#[test]
fn small_instance_fd_within_tolerance() {
    // N=10, K=3, T=4, d=8, r=4
    let (p, pool, state, c) = sized_instance(3, 10, 3, 4, 8, 4);
    let report = fd_check(&p, &pool, &state, &c, 1e-5).unwrap();
    assert!(report.max() <= 1e-4, "{report:?}");
}

#[test]
fn lambda_zero_kills_the_residual_gradient() {
    let (p, pool, state, mut c) = sized_instance(4, 10, 3, 4, 8, 4);
    c.lambda = 0.0;
    let (_, tape) = forward_objective(&p, &pool, &state, &c).unwrap();
    assert!(backward(&tape).delta.iter().all(|&x| x == 0.0));
    assert_eq!(fd_check(&p, &pool, &state, &c, 1e-5).unwrap().delta, 0.0);
}

#[test]
fn uniform_posteriors_give_ln_k_and_zero_gradient() {
    let (n, k, t, d) = (6, 3, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let class = random_unit_rows(&mut rng, 1, d);
    let classes = Array2::from_shape_fn((k, d), |(_, j)| class[[0, j]]);
    let pool = PromptPool::new(Array3::from_shape_fn((k, t, d), |(_, _, j)| class[[0, j]])).unwrap();
    let p = ProposalSet::new(random_boxes(&mut rng, n), random_unit_rows(&mut rng, n, d), classes).unwrap();
    let mut state = AdaptState::zero_init(d, 2, 1).unwrap();
    state.phi.w_up = random_unit_rows(&mut rng, d / 2, d);
    let c = EpisodeConstants {
        weights: vec![1.0; n],
        selections: SelectionSets::all(k, t),
        lambda: 0.5,
        kappa: 20.0,
        top_m: (0..n).collect(),
    };
    let (loss, tape) = forward_objective(&p, &pool, &state, &c).unwrap();
    assert!((loss - (k as f64).ln()).abs() < 1e-12);
    let g = backward(&tape);
    assert!(g.phi.to_flat().iter().chain(g.delta.iter()).all(|x| x.abs() < 1e-12));
    assert!(fd_check(&p, &pool, &state, &c, 1e-5).unwrap().max() <= 1e-8);
}

#[test]
fn zero_init_plain_objective_is_mean_detector_entropy() {
    let (p, pool, _, mut c) = sized_instance(6, 12, 4, 3, 8, 2);
    let state = AdaptState::zero_init(8, 2, 0).unwrap();
    c.lambda = 0.0;
    c.weights = vec![1.0; c.top_m.len()];
    let (loss, _) = forward_objective(&p, &pool, &state, &c).unwrap();
    let h = entropy(posterior(detector_scores(p.features(), p.class_embeddings()).unwrap().view(), c.kappa).view());
    let mean = h.sum() / h.len() as f64;
    assert!((loss - mean).abs() < 1e-12);
}

#[test]
fn doubling_weights_changes_nothing() {
    let (p, pool, state, c) = sized_instance(7, 9, 3, 4, 8, 4);
    let doubled = EpisodeConstants { weights: c.weights.iter().map(|w| 2.0 * w).collect(), ..c.clone() };
    let (l1, t1) = forward_objective(&p, &pool, &state, &c).unwrap();
    let (l2, t2) = forward_objective(&p, &pool, &state, &doubled).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(backward(&t1), backward(&t2));
}

#[test]
fn random_instances_pass_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let inst = random_grad_instance(&mut rng, 50, 5, 8, 16, 4).unwrap();
        let r = fd_check(&inst.proposals, &inst.pool, &inst.state, &inst.constants, 1e-5).unwrap();
        assert!(r.max() <= 1e-4, "{r:?}");
    }
}

#[test]
fn broken_backward_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let inst = random_grad_instance(&mut rng, 50, 5, 8, 16, 4).unwrap();
        let r = fd_check_with(
            &inst.proposals,
            &inst.pool,
            &inst.state,
            &inst.constants,
            1e-5,
            BackwardVariant::DropNormalizeProjection,
        )
        .unwrap();
        worst = worst.max(r.max());
    }
    assert!(worst > 1e-4, "mutation went unnoticed: {worst}");
}

#[test]
fn fd_step_outside_range_is_rejected() {
    let (p, pool, state, c) = golden();
    assert!(fd_check(&p, &pool, &state, &c, 1e-2).is_err());
    assert!(fd_check(&p, &pool, &state, &c, 1e-9).is_err());
}

#[test]
fn mismatched_constants_are_rejected() {
    let (p, pool, state, mut c) = golden();
    c.weights.pop();
    assert!(forward_objective(&p, &pool, &state, &c).is_err());
}
