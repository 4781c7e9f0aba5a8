//! JSON pipeline configuration shared by the CLI and the experiment runners.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterTrainConfig;
use crate::backbone::BackboneTrainConfig;
use crate::error::{Error, Result};
use crate::graphio::SynthConfig;
use crate::retrieve::{DEFAULT_K, DEFAULT_TOP_N};
use crate::vindex::IndexConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub temperatures: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            temperatures: vec![1.0, 5.0, 25.0, 50.0],
            lambdas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub held_classes: BTreeSet<u8>,
    /// 0 is the zero-shot regime.
    pub keep_fractions: Vec<f64>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            held_classes: (6..=10).collect(),
            keep_fractions: vec![0.0, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub backbone: BackboneTrainConfig,
    pub index: IndexConfig,
    pub adapter: AdapterTrainConfig,
    pub grid: GridConfig,
    pub fewshot: FewShotConfig,
    /// Neighbors retrieved per site.
    pub k: usize,
    pub top_n: usize,
    pub bench_runs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            backbone: BackboneTrainConfig::default(),
            index: IndexConfig::default(),
            adapter: AdapterTrainConfig::default(),
            grid: GridConfig::default(),
            fewshot: FewShotConfig::default(),
            k: DEFAULT_K,
            top_n: DEFAULT_TOP_N,
            bench_runs: 10,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.top_n == 0 {
            return Err(Error::Config("k and top_n must be positive".into()));
        }
        if self.grid.temperatures.is_empty() || self.grid.lambdas.is_empty() {
            return Err(Error::Config("grids must be nonempty".into()));
        }
        if self.grid.temperatures.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("grid temperatures must be positive".into()));
        }
        if self.grid.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("grid lambdas must lie in [0, 1]".into()));
        }
        if self.fewshot.held_classes.iter().any(|c| !(1..=10).contains(c)) {
            return Err(Error::Config("held classes must lie in 1..=10".into()));
        }
        Ok(())
    }

    /// Points every stochastic step at one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.backbone.seed = seed;
        self.index.seed = seed;
        self.adapter.seed = seed;
        self
    }

    /// Makes the adapter's distance vector as long as the retrieval `k`.
    pub fn synced(mut self) -> Self {
        self.adapter.k = self.k;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
