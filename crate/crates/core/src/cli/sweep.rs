use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::adapt::{EpisodeConfig, Method};
use crate::error::{Error, Result};

use super::bench::{bench, summarize};
use super::config::RunConfig;

pub const SWEEP_HEADER: &str = "param,value,method,n_seeds,mAP,AP50,AP75";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Theta,
    Gamma,
    Lambda,
    Rho,
    TopM,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Theta => "theta",
            SweepParam::Gamma => "gamma",
            SweepParam::Lambda => "lambda",
            SweepParam::Rho => "rho",
            SweepParam::TopM => "top_m",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &EpisodeConfig, value: f64) -> Result<EpisodeConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Theta => cfg.theta = value,
            SweepParam::Gamma => cfg.gamma = value,
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::Rho => cfg.rho = value,
            SweepParam::TopM => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::InvalidConfig(format!("top_m must be a positive integer, got {value}")));
                }
                cfg.top_m = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::Theta, SweepParam::Gamma, SweepParam::Lambda, SweepParam::Rho, SweepParam::TopM]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep parameter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub method: Method,
    pub n_seeds: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
}

/// Parses `v1,v2,...`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("grid value {v:?} is not a number"))))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    Ok(values)
}

/// One benchmark per grid value, reduced to means over seeds per method.
pub fn sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    // validate the whole grid before running anything
    let configs: Vec<EpisodeConfig> = grid.iter().map(|&v| param.apply(&cfg.episode, v)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (&value, episode) in grid.iter().zip(configs) {
        let run = RunConfig { episode, record_timing: false, ..cfg.clone() };
        for (method, n, [map, ap50, ap75]) in summarize(&bench(&run)?) {
            out.push(SweepRow { param: param.to_string(), value, method, n_seeds: n, map, ap50, ap75 });
        }
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> anyhow::Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(SWEEP_HEADER.split(','))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
