//! Command-line front end: benchmark runs, single-episode dumps, the oracle
//! check suite, parameter sweeps, and scene export.

pub mod bench;
pub mod check;
pub mod config;
pub mod dump;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::adapt::{Method, TtaEngine};
use crate::scene::SceneDocument;
use crate::sim::make_suite;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "vlodtta", version, about = "Test-time adaptation for open-vocabulary detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured method over every seed and write one CSV row each.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; defaults to the config's `out` field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one adaptation episode and dump its intermediate values as JSON.
    Episode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle and invariant checks; exits nonzero on any failure.
    Check,
    /// Repeat the benchmark over a grid of one episode parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of theta, gamma, lambda, rho, top_m.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated scene as a scene document.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one method on a scene document and print its detections as JSON.
    Run {
        /// Scene document (see `export`).
        #[arg(long)]
        input: PathBuf,
        /// Config supplying the episode parameters; defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "vlodtta")]
        method: String,
    },
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `<out>.config.json`, the resolved configuration written next to results.
pub fn config_sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

fn write_config_sidecar(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let mut f = create(&config_sidecar(out))?;
    writeln!(f, "{}", cfg.to_json())?;
    f.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Bench { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = match out.or_else(|| cfg.out.clone().map(PathBuf::from)) {
                Some(p) => p,
                None => bail!("no output path: pass --out or set \"out\" in the config"),
            };
            println!("{}", cfg.to_json());
            let rows = bench::bench(&cfg)?;
            let mut f = create(&out)?;
            bench::write_rows(&rows, &mut f)?;
            f.flush()?;
            write_config_sidecar(&cfg, &out)?;
            println!("{:<8} {:>6} {:>8} {:>8} {:>8}", "method", "seeds", "mAP", "AP50", "AP75");
            for (method, n, [map, ap50, ap75]) in bench::summarize(&rows) {
                println!("{:<8} {n:>6} {map:>8.4} {ap50:>8.4} {ap75:>8.4}", method.as_str());
            }
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Episode { config, scene, out } => {
            let cfg = RunConfig::load(&config)?;
            let dump = dump::episode_dump(&cfg, scene)?;
            let mut f = create(&out)?;
            serde_json::to_writer(&mut f, &dump)?;
            f.flush()?;
            println!(
                "scene {scene}: loss {:.6}, {} clusters, {} detections -> {}",
                dump.loss,
                dump.clusters.len(),
                dump.detections.len(),
                out.display()
            );
        }
        Command::Check => {
            let results = check::run_all();
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                failed += usize::from(!r.passed);
            }
            let total: f64 = results.iter().map(|r| r.seconds).sum();
            println!("{} of {} checks passed in {total:.2}s", results.len() - failed, results.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Sweep { config, param, grid, out } => {
            let cfg = RunConfig::load(&config)?;
            let param: sweep::SweepParam = param.parse()?;
            let grid = sweep::parse_grid(&grid)?;
            let rows = sweep::sweep(&cfg, param, &grid)?;
            let mut f = create(&out)?;
            sweep::write_sweep(&rows, &mut f)?;
            f.flush()?;
            write_config_sidecar(&cfg, &out)?;
            for r in &rows {
                println!(
                    "{}={:<6} {:<8} mAP {:.4} AP50 {:.4} AP75 {:.4}",
                    r.param,
                    r.value,
                    r.method.as_str(),
                    r.map,
                    r.ap50,
                    r.ap75
                );
            }
        }
        Command::Export { config, scene, out } => {
            let cfg = RunConfig::load(&config)?;
            if scene >= cfg.n_scenes {
                bail!("scene index {scene} out of range for {} scenes", cfg.n_scenes);
            }
            let suite = make_suite(cfg.first_seed, scene + 1, &cfg.sim, &cfg.shift)?;
            let g = &suite.scenes[scene];
            let doc = SceneDocument::from_parts(&g.proposals, &suite.world.pool, g.ground_truth());
            let mut f = create(&out)?;
            serde_json::to_writer(&mut f, &doc)?;
            f.flush()?;
        }
        Command::Run { input, config, method } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let method: Method = method.parse()?;
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let doc: SceneDocument =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
            let (proposals, pool, _) = doc.into_parts()?;
            let mut engine = TtaEngine::new(cfg.episode.clone(), proposals.dim())?;
            let detections = engine.run(method, &proposals, &pool)?;
            println!("{}", serde_json::to_string(&detections)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
