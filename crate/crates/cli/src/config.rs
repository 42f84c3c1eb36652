//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use quadlat::control::{AmConfig, LocoConfig};
use quadlat::dataset::SamplerConfig;
use quadlat::eval::ContactThresholds;
use quadlat::nn::TrainConfig;
use quadlat::robot::RobotParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub workers: Option<usize>,
    /// Robot parameter file; `robot` entries apply on top of it.
    pub params_file: Option<PathBuf>,
    pub robot: Option<toml::Table>,
    pub sampler: Option<SamplerConfig>,
    pub train: Option<TrainConfig>,
    pub am: Option<AmConfig>,
    pub loco: Option<LocoConfig>,
    pub contacts: Option<ContactThresholds>,
    pub margins: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative parameter files resolve against the config's directory.
        if let (Some(p), Some(dir)) = (&cfg.params_file, path.parent()) {
            if p.is_relative() {
                cfg.params_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    /// Robot parameters from `--params`, else the file's `params_file`, with
    /// inline `robot` entries on top.
    pub fn robot_params(&self, flag: Option<&Path>) -> Result<RobotParams> {
        let base = match flag.or(self.params_file.as_deref()) {
            Some(p) => RobotParams::load(p).with_context(|| format!("loading robot parameters {}", p.display()))?,
            None => RobotParams::default(),
        };
        let Some(over) = &self.robot else { return Ok(base) };
        let mut table = toml::Table::try_from(&base).context("serialising robot parameters")?;
        for (k, v) in over {
            table.insert(k.clone(), v.clone());
        }
        let merged = toml::to_string(&table).context("merging robot parameters")?;
        Ok(RobotParams::from_toml_str(&merged)?)
    }
}
