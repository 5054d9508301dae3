//! The TOML run configuration. Every key is optional; command-line flags
//! override values read from the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use chiarella::calibrate::CalibrationConfig;
use chiarella::model::GbmSpec;
use chiarella::report::ReportOptions;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub symbol: Option<String>,
    pub date: Option<NaiveDate>,
    pub calibration: CalibrationConfig,
    pub report: ReportOptions,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub max_lag: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            s0: 100.0,
            mu: 0.0,
            sigma: 0.001,
            n_steps: 390,
            n_paths: 100,
            max_lag: 20,
        }
    }
}

impl ScenarioConfig {
    pub fn gbm(&self) -> GbmSpec {
        GbmSpec {
            s0: self.s0,
            mu: self.mu,
            sigma: self.sigma,
            n_steps: self.n_steps,
            n_paths: self.n_paths,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
