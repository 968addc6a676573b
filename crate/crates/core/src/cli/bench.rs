use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{EpisodeConfig, Method, TtaEngine};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ApReport, ImageResult};
use crate::sim::{make_suite, Suite};

use super::config::RunConfig;

pub const CSV_HEADER: &str = "method,base_seed,n_scenes,shift_magnitude,mAP,AP50,AP75,mean_episode_ms";

/// Scores of one method on one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub base_seed: u64,
    pub n_scenes: usize,
    pub shift_magnitude: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    pub mean_episode_ms: Option<f64>,
}

/// Runs `method` on every scene of `suite` and evaluates the detections.
/// Returns the report and, with `record_timing`, the mean episode time.
pub fn run_suite(
    method: Method,
    cfg: &EpisodeConfig,
    suite: &Suite,
    record_timing: bool,
) -> Result<(ApReport, Option<f64>)> {
    let dim = suite.world.prototypes.ncols();
    let results: Vec<(ImageResult, f64)> = suite
        .scenes
        .par_iter()
        .map(|scene| {
            let mut engine = TtaEngine::new(cfg.clone(), dim)?;
            let start = Instant::now();
            let detections = match engine.run(method, &scene.proposals, &suite.world.pool) {
                Err(Error::EmptyImage) => Vec::new(),
                other => other?,
            };
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((ImageResult { detections, ground_truth: scene.ground_truth().to_vec() }, ms))
        })
        .collect::<Result<_>>()?;
    let report = evaluate(&results.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>(), suite.world.prototypes.nrows());
    let timing = record_timing.then(|| results.iter().map(|(_, ms)| ms).sum::<f64>() / results.len() as f64);
    Ok((report, timing))
}

/// One row per (method, base seed), ordered by seed then by the configured
/// method order.
pub fn bench(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let seeds: Vec<u64> = cfg.base_seeds().collect();
    let per_seed: Vec<Vec<ResultRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let suite = make_suite(seed, cfg.n_scenes, &cfg.sim, &cfg.shift)?;
            cfg.methods
                .iter()
                .map(|&method| {
                    let (report, ms) = run_suite(method, &cfg.episode, &suite, cfg.record_timing)?;
                    Ok(ResultRow {
                        method,
                        base_seed: seed,
                        n_scenes: cfg.n_scenes,
                        shift_magnitude: cfg.shift.magnitude,
                        map: report.map,
                        ap50: report.ap50,
                        ap75: report.ap75,
                        mean_episode_ms: ms,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> anyhow::Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean of each metric per method, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<(Method, usize, [f64; 3])> {
    let mut order: Vec<Method> = Vec::new();
    for r in rows {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = sel.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            (m, sel.len(), [mean(|r| r.map), mean(|r| r.ap50), mean(|r| r.ap75)])
        })
        .collect()
}
