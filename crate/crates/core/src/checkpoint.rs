//! Versioned JSON snapshots of a training run.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::network::{LayerWeights, NeuronOverrides};
use crate::trainer::{BumpState, OptimizerState, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete state of a run: resuming from a checkpoint continues the exact
/// trajectory of the uninterrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Experiment configuration as TOML text.
    pub config: String,
    /// Completed epochs.
    pub epoch: usize,
    pub weights: Vec<LayerWeights>,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub bump: BumpState,
    pub overrides: Option<NeuronOverrides>,
}

impl Checkpoint {
    /// Snapshot `trainer`; its training section replaces the one in `exp`.
    pub fn capture(exp: &ExperimentConfig, trainer: &Trainer) -> Result<Self> {
        let mut exp = exp.clone();
        exp.training = trainer.config.clone();
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config: exp.to_toml()?,
            epoch: trainer.epoch,
            weights: trainer.weights.clone(),
            optimizer: trainer.optimizer.clone(),
            rng: trainer.rng.clone(),
            bump: trainer.bump,
            overrides: trainer.overrides.clone(),
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config)
    }

    /// Rebuild the configuration and trainer.
    pub fn restore(&self) -> Result<(ExperimentConfig, Trainer)> {
        let exp = self.experiment()?;
        let topology = exp.topology()?;
        exp.training.validate(&topology)?;
        topology.check_weights(&self.weights)?;
        let shapes_match = self.optimizer.m.len() == self.weights.len()
            && self.optimizer.v.len() == self.weights.len()
            && self.weights.iter().enumerate().all(|(l, w)| {
                self.optimizer.m[l].len() == w.values.len()
                    && self.optimizer.v[l].len() == w.values.len()
            });
        if !shapes_match {
            return Err(Error::Shape("optimizer moments do not match the weights".into()));
        }
        if let Some(o) = &self.overrides {
            let ok = o.len() == topology.n_weight_layers()
                && o.iter().zip(&topology.layer_sizes[1..]).all(|(l, &n)| l.len() == n);
            if !ok {
                return Err(Error::Shape("substrate parameters do not match the topology".into()));
            }
        }
        let trainer = Trainer {
            topology,
            config: exp.training.clone(),
            weights: self.weights.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            epoch: self.epoch,
            bump: self.bump,
            overrides: self.overrides.clone(),
        };
        Ok((exp, trainer))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!(
                        "unsupported checkpoint version {other:?}, expected {CHECKPOINT_VERSION}"
                    ),
                })
            }
        }
        Ok(serde_json::from_value(value)?)
    }
}
