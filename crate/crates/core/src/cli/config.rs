use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{EpisodeConfig, Method};
use crate::error::{Error, Result};
use crate::sim::{ShiftSpec, SimConfig};

/// One JSON document describing a benchmark run. Every field has a default,
/// so `{}` is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episode: EpisodeConfig,
    pub sim: SimConfig,
    pub shift: ShiftSpec,
    /// Number of base seeds; seed `j` is `first_seed + j`.
    pub seeds: usize,
    pub first_seed: u64,
    pub n_scenes: usize,
    pub methods: Vec<Method>,
    /// Measure wall-clock time per episode. Off by default so that result
    /// files are reproducible byte for byte.
    pub record_timing: bool,
    /// Default output path when `--out` is not given.
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            sim: SimConfig::default(),
            shift: ShiftSpec::default(),
            seeds: 20,
            first_seed: 0,
            n_scenes: 20,
            methods: Method::ALL.to_vec(),
            record_timing: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.sim.validate()?;
        self.shift.validate()?;
        crate::adapt::adapter::hidden_width(self.sim.dim, self.episode.reduction)?;
        if self.seeds == 0 || self.n_scenes == 0 {
            return Err(Error::InvalidConfig("seeds and n_scenes must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidConfig("methods listed more than once".into()));
        }
        Ok(())
    }

    pub fn base_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds as u64).map(move |j| self.first_seed + j)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sedes": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"episode": {"gama": 1.0}}"#).is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        let cfg =
            RunConfig::from_json(r#"{"seeds": 2, "methods": ["zs", "vlodtta"], "episode": {"lr": 0.0}}"#).unwrap();
        let once = cfg.to_json();
        let twice = RunConfig::from_json(&once).unwrap().to_json();
        assert_eq!(once, twice);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"episode": {"rho": 0.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"methods": []}"#).is_err());
        assert!(RunConfig::from_json(r#"{"methods": ["zs", "zs"]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"episode": {"reduction": 5}}"#).is_err());
    }
}
