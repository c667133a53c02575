//! Experiment configuration file.

use std::path::{Path, PathBuf};

use ccg_core::cfs::CfsConfig;
use ccg_core::graph::GraphTrainConfig;
use ccg_core::sae::SaeTrainConfig;
use ccg_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
}

/// One JSON file drives a full experiment: data sources, per-stage
/// hyperparameters and the seed list. Every field has a default, so minimal
/// configs stay minimal.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Externally supplied activation matrices, one per dataset.
    pub datasets: Vec<DatasetSpec>,
    /// Synthetic source used when no datasets are given.
    pub synth: Option<SynthConfig>,
    pub sae: SaeTrainConfig,
    pub graph: GraphTrainConfig,
    pub cfs: CfsConfig,
    pub seeds: Vec<u64>,
    /// Skip the SAE stage and run the graph directly on the bundle's planted
    /// concept matrix. Only meaningful with a synthetic source.
    pub use_planted_concepts: bool,
    /// Hold out the last fraction of rows for CFS evaluation. Default: train
    /// and evaluate on the same split.
    pub eval_split: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            synth: None,
            sae: SaeTrainConfig::default(),
            graph: GraphTrainConfig::default(),
            cfs: CfsConfig::default(),
            seeds: vec![42, 43, 44, 45, 46],
            use_planted_concepts: false,
            eval_split: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_reader(file)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::input("config needs at least one seed"));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(s)) {
            return Err(CliError::input("seeds must be distinct"));
        }
        if let Some(split) = self.eval_split {
            if !(0.0 < split && split < 1.0) {
                return Err(CliError::input("eval_split must be in (0, 1)"));
            }
        }
        if self.use_planted_concepts && self.synth.is_none() {
            return Err(CliError::input(
                "use_planted_concepts requires a synth source",
            ));
        }
        Ok(())
    }

    /// A data source must exist for pipeline-running commands.
    pub fn require_source(&self) -> Result<()> {
        if self.datasets.is_empty() && self.synth.is_none() {
            return Err(CliError::input(
                "config needs either datasets or a synth section",
            ));
        }
        Ok(())
    }
}
