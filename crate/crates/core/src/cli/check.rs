//! Oracle and invariant checks run by `vlodtta check`.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{build_class_graphs, cluster_weights, iwe_loss};
use crate::error::Result;
use crate::eval::{average_precision, evaluate};
use crate::geometry::nms;
use crate::grad::{fd_check_with, BackwardVariant};
use crate::oracle::{
    brute_force_nms, coco_fixture, cosine_euclidean_gap, dfs_components, random_boxes, random_detections,
    random_grad_instance, random_unit_rows, COCO_FIXTURE_EXPECTED,
};
use crate::scoring::{
    aggregate_selected, entropy, fuse, image_prompt_compat, posterior, select_prompts, SelectionSets,
};

pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Worst finite-difference error over `instances` random objectives.
pub fn fd_gradients(seed: u64, instances: usize, variant: BackwardVariant) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_grad_instance(&mut rng, 50, 5, 8, 16, 4)?;
        let report = fd_check_with(&inst.proposals, &inst.pool, &inst.state, &inst.constants, FD_STEP, variant)?;
        worst = worst.max(report.max());
    }
    Ok(worst)
}

pub fn check_fd() -> CheckResult {
    timed("gradient_fd", || {
        let worst = fd_gradients(0x6d1, 50, BackwardVariant::Exact)?;
        Ok((worst <= FD_TOLERANCE, format!("50 instances, max relative error {worst:.2e}")))
    })
}

pub fn check_components() -> CheckResult {
    timed("components_vs_dfs", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
        for case in 0..200 {
            let n = rng.random_range(1..=100);
            let boxes = random_boxes(&mut rng, n);
            let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let theta = rng.random_range(0.0..=1.0);
            let fast = build_class_graphs(&boxes, &classes, theta)?;
            if fast.component_id != dfs_components(&boxes, &classes, theta) {
                return Ok((false, format!("instance {case} differs")));
            }
        }
        Ok((true, "200 instances agree".into()))
    })
}

pub fn check_nms() -> CheckResult {
    timed("nms_vs_bruteforce", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x4e);
        for case in 0..200 {
            let n = rng.random_range(0..=100);
            let dets = random_detections(&mut rng, n, 3);
            let thr = rng.random_range(0.1..=0.9);
            let class_wise = rng.random::<bool>();
            if nms(&dets, thr, class_wise) != brute_force_nms(&dets, thr, class_wise) {
                return Ok((false, format!("instance {case} differs")));
            }
        }
        Ok((true, "200 instances agree".into()))
    })
}

pub fn check_ap_fixtures() -> CheckResult {
    timed("ap_fixtures", || {
        let single = average_precision(&[true], 1).unwrap_or(f64::NAN);
        let pair = average_precision(&[false, true], 2).unwrap_or(f64::NAN);
        let (images, k) = coco_fixture();
        let r = evaluate(&images, k);
        let got = [r.map, r.ap50, r.ap75];
        let fixture_err = got.iter().zip(COCO_FIXTURE_EXPECTED).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = single == 1.0 && (pair - 51.0 / 101.0 * 0.5).abs() <= 1e-9 && fixture_err <= 1e-6;
        Ok((ok, format!("single {single}, pair {pair:.6}, fixture error {fixture_err:.1e}")))
    })
}

/// Worst gap of the cosine/squared-distance identity over random sets.
pub fn cosine_identity_gap(seed: u64, sets: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(2..=64);
        let v = random_unit_rows(&mut rng, n, d);
        let e = random_unit_rows(&mut rng, 1, d);
        worst = worst.max(cosine_euclidean_gap(v.view(), e.row(0)));
    }
    worst
}

pub fn check_cosine_identity() -> CheckResult {
    timed("cosine_euclidean_identity", || {
        let worst = cosine_identity_gap(0xce, 1000);
        Ok((worst <= 1e-10, format!("1000 sets, max gap {worst:.1e}")))
    })
}

pub fn check_reductions() -> CheckResult {
    timed("reductions", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7ed);
        for case in 0..100 {
            let n = rng.random_range(1..=60);
            let (k, t) = (rng.random_range(2..=6), rng.random_range(1..=8));
            let scores = Array2::from_shape_simple_fn((n, k), || rng.random_range(-1.0..1.0));
            let h = entropy(posterior(scores.view(), 20.0).view()).to_vec();
            let boxes = random_boxes(&mut rng, n);
            let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

            let clusters = build_class_graphs(&boxes, &classes, 0.6)?;
            let loss = iwe_loss(&h, &cluster_weights(&clusters, 0.0))?;
            let mean = h.iter().sum::<f64>() / n as f64;
            if (loss - mean).abs() > 1e-12 {
                return Ok((false, format!("gamma=0 loss differs from mean entropy on instance {case}")));
            }

            let mut distinct = classes.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if build_class_graphs(&boxes, &classes, 0.0)?.num_components() != distinct.len() {
                return Ok((false, format!("theta=0 components differ on instance {case}")));
            }

            let z = Array3::from_shape_simple_fn((n, k, t), || rng.random_range(-1.0..1.0));
            if fuse(aggregate_selected(z.view(), &SelectionSets::all(k, t)).view(), scores.view(), 0.0) != scores {
                return Ok((false, format!("lambda=0 fusion differs on instance {case}")));
            }
            let plain = Array2::from_shape_fn((n, k), |(i, c)| (0..t).map(|p| z[[i, c, p]]).sum::<f64>() / t as f64);
            let everything = select_prompts(image_prompt_compat(z.view()).view(), 1.0)?;
            if aggregate_selected(z.view(), &everything) != plain {
                return Ok((false, format!("rho=1 aggregation differs on instance {case}")));
            }
        }
        Ok((true, "gamma=0, theta=0, lambda=0, rho=1 on 100 instances".into()))
    })
}

/// Every check, in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    vec![check_fd(), check_components(), check_nms(), check_ap_fixtures(), check_cosine_identity(), check_reductions()]
}
