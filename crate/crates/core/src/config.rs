//! Pipeline configuration file: one TOML document with a section per stage.
//!
//! Every stage's `seed` is overwritten by the top-level master seed when the
//! file is resolved, so a single number controls all randomness.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::BoundaryMode;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::generate::GenerateConfig;
use crate::meta::Provenance;
use crate::nn::ModelConfig;
use crate::pretrain::TrainConfig;
use crate::rltf::{PpoConfig, PrefConfig, RewardConfig, SftConfig};
use crate::synthworld::WorldConfig;

/// Architecture fields; the vocabulary size comes from the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub block_size: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(2);
        ModelSection {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            block_size: d.block_size,
            dropout: d.dropout,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            block_size: self.block_size,
            vocab_size,
            dropout: self.dropout,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub num_trajectories: usize,
    pub temperature: f64,
    pub max_len: usize,
    pub rcm_masking: bool,
    pub max_retries: usize,
    /// Values used by a temperature sweep.
    pub sweep: Vec<f64>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerateConfig::default();
        GenerateSection {
            num_trajectories: 4000,
            temperature: g.temperature,
            max_len: g.max_len,
            rcm_masking: g.rcm_masking,
            max_retries: g.max_retries,
            sweep: vec![0.5, 0.8, 1.0, 1.2, 1.5],
        }
    }
}

impl GenerateSection {
    pub fn sampling(&self) -> GenerateConfig {
        GenerateConfig {
            temperature: self.temperature,
            max_len: self.max_len,
            rcm_masking: self.rcm_masking,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub boundary_mode: BoundaryMode,
    /// Fraction of the corpus used for training; the rest is held out.
    pub train_frac: f64,
    /// Regions per side of the square region grid.
    pub region_grid: usize,
    pub world: WorldConfig,
    pub model: ModelSection,
    pub pretrain: TrainConfig,
    pub generate: GenerateSection,
    pub prefs: PrefConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub sft: SftConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            boundary_mode: BoundaryMode::EotOnly,
            train_frac: 0.8,
            region_grid: 8,
            world: WorldConfig::default(),
            model: ModelSection::default(),
            pretrain: TrainConfig::default(),
            generate: GenerateSection::default(),
            prefs: PrefConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            sft: SftConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg.split('`').nth(1).unwrap_or("config").to_string();
            Error::config(field, e.to_string().trim().to_string())
        })?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copies the master seed into every stage.
    pub fn resolved(mut self) -> Self {
        let s = self.seed;
        self.world.seed = s;
        self.pretrain.seed = s;
        self.prefs.seed = s;
        self.reward.seed = s;
        self.ppo.seed = s;
        self.sft.seed = s;
        self.eval.seed = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::config("train_frac", "must lie in (0, 1)"));
        }
        if self.region_grid == 0 {
            return Err(Error::config("region_grid", "must be at least 1"));
        }
        self.world.validate()?;
        self.model.model_config(2, self.seed).validate()?;
        self.pretrain.validate()?;
        self.generate.sampling().validate()?;
        for &t in &self.generate.sweep {
            GenerateConfig { temperature: t, ..self.generate.sampling() }.validate()?;
        }
        self.ppo.validate()?;
        self.sft.optimizer.validate()?;
        self.reward.optimizer.validate()
    }

    /// SHA-256 of the canonical JSON encoding of the resolved config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.config_hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn master_seed_reaches_every_stage() {
        let c = PipelineConfig::from_toml("seed = 7\n[pretrain]\nseed = 3\n").unwrap();
        assert_eq!((c.world.seed, c.pretrain.seed, c.ppo.seed, c.eval.seed), (7, 7, 7, 7));
    }

    #[test]
    fn unknown_field_is_named() {
        let e = PipelineConfig::from_toml("[pretrain]\nstepz = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("stepz"), "{e}");
    }

    #[test]
    fn invalid_value_is_named() {
        let c = PipelineConfig::from_toml("[ppo]\nclip_eps = 1.5\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("clip_eps"));
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = PipelineConfig::default().with_seed(3);
        c.pretrain.steps = 17;
        c.generate.temperature = 0.7;
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
        assert_ne!(c.config_hash(), PipelineConfig::default().config_hash());
    }
}
