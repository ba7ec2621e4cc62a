//! Run configuration: one JSON document that fully determines a command's
//! outputs. Flags override file values; the merged result is written next
//! to every output as `resolved_config.json`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mnpe::estimator::ArchConfig;
use mnpe::metrics::C2stConfig;
use mnpe::nn::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<String>,
    /// `None` means the model's default architecture.
    pub arch: Option<ArchConfig>,
    pub simulation: SimulationConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n: usize,
    pub seed: u64,
    /// Observation in raw simulator units.
    pub obs: Option<Vec<f64>>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            obs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Prior-predictive pairs for SBC and reliability.
    pub n_test: usize,
    /// Posterior draws per pair (SBC) and per observation (C2ST).
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
    /// Monte Carlo replicates behind the EoD band.
    pub baseline_mc: usize,
    /// Test observations for C2ST against the reference.
    pub observations: usize,
    /// Test pairs for the posterior-predictive MSE.
    pub mse_test: usize,
    pub c2st: C2stConfig,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_test: 500,
            samples: 1000,
            bins: 10,
            seed: 0,
            baseline_mc: 2000,
            observations: 10,
            mse_test: 500,
            c2st: C2stConfig::default(),
            budgets: vec![100, 1000, 10_000],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File contents when a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn model_name(&self) -> Result<&str> {
        self.model
            .as_deref()
            .ok_or_else(|| mnpe::Error::Input("no model given (use --model or set \"model\" in the config)".into()).into())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
