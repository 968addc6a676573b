use std::time::Instant;

use ndarray::Array1;

use vlodtta::adapt::{EpisodeConfig, Method};
use vlodtta::cli::bench::run_suite;
use vlodtta::scoring::{image_prompt_compat, prompt_scores, select_prompts, selection_size};
use vlodtta::sim::{make_suite, ShiftSpec, SimConfig};

fn zero_shot_map(seed: u64, shift: &ShiftSpec) -> f64 {
    let suite = make_suite(seed, 20, &SimConfig::default(), shift).unwrap();
    run_suite(Method::ZeroShot, &EpisodeConfig::default(), &suite, false).unwrap().0.map
}

#[test]
fn default_shift_degrades_zero_shot_detection() {
    let shifted = ShiftSpec::default();
    let clean = ShiftSpec { magnitude: 0.0, ..shifted };
    assert_eq!(shifted.magnitude, 0.5);
    assert!(zero_shot_map(0, &shifted) < zero_shot_map(0, &clean));
    // single suites are noisy at high IoU thresholds, so also check the mean
    // over the benchmark seeds
    let (lo, hi) = (0..20)
        .fold((0.0, 0.0), |(lo, hi), seed| (lo + zero_shot_map(seed, &shifted), hi + zero_shot_map(seed, &clean)));
    assert!(lo < hi, "shifted {} vs clean {}", lo / 20.0, hi / 20.0);
}

#[test]
fn aligned_prompt_count_matches_default_selection_size() {
    let cfg = SimConfig::default();
    let rho = EpisodeConfig::default().rho;
    assert_eq!(cfg.aligned_prompts, selection_size(rho, cfg.prompts_per_class));
}

/// Fraction of the aligned prompts that zero-init selection picks, averaged
/// over classes and seeds.
fn recovery(magnitude: f64) -> f64 {
    let cfg = SimConfig::default();
    let rho = EpisodeConfig::default().rho;
    let shift = ShiftSpec { magnitude, ..ShiftSpec::default() };
    let mut total = 0.0;
    let mut count = 0;
    for seed in 0..20 {
        let suite = make_suite(seed, 1, &cfg, &shift).unwrap();
        let p = &suite.scenes[0].proposals;
        let z = prompt_scores(p.features(), &suite.world.pool, Array1::zeros(p.dim()).view()).unwrap();
        let sel = select_prompts(image_prompt_compat(z.view()).view(), rho).unwrap();
        for (picked, aligned) in sel.iter().zip(&suite.world.aligned) {
            let hits = aligned.iter().filter(|t| picked.contains(t)).count();
            total += hits as f64 / aligned.len() as f64;
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn selection_recovers_shift_aligned_prompts() {
    for magnitude in [0.3, 0.5, 1.0] {
        let r = recovery(magnitude);
        assert!(r >= 0.5, "magnitude {magnitude}: recovered {r}");
    }
}

#[test]
fn default_suite_generates_quickly() {
    let start = Instant::now();
    let suite = make_suite(0, 20, &SimConfig::default(), &ShiftSpec::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(suite.scenes.len(), 20);
    assert!(elapsed < 1.0, "{elapsed}s");
}

#[test]
fn suites_are_reproducible_and_distinct() {
    let cfg = SimConfig::default();
    let shift = ShiftSpec::default();
    let a = make_suite(3, 4, &cfg, &shift).unwrap();
    assert_eq!(a, make_suite(3, 4, &cfg, &shift).unwrap());
    assert_ne!(a.scenes[0].proposals, a.scenes[1].proposals);
    assert_ne!(a.world, make_suite(4, 1, &cfg, &shift).unwrap().world);
}
