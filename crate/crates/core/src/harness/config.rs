use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::RadioParams;
use crate::codebook::CodebookConfig;
use crate::error::{Error, Result};
use crate::fusion::BetaGrid;
use crate::localization::KbParams;
use crate::neural::{LeNetConfig, TrainConfig, TransformerConfig};
use crate::scene::{CorruptionProfile, WorldConfig};

/// The configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

/// Width of each split's seed range; episode seeds never collide across splits.
pub const SPLIT_SEED_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub episode_len: usize,
    pub seq_len: usize,
    pub train_corruption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    pub num_antennas: usize,
    pub num_beams: usize,
    pub carrier_hz: f64,
}

impl CodebookSection {
    pub fn to_config(&self) -> CodebookConfig {
        CodebookConfig::half_wavelength(self.num_antennas, self.num_beams, self.carrier_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for data generation and corruption.
    pub seed: u64,
    /// Latency budget for semantic localization, milliseconds (reported, not enforced).
    pub t_max_ms: f64,
    pub scenarios: Vec<String>,
    /// Overridden by `--out`; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub world: WorldConfig,
    pub codebook: CodebookSection,
    pub radio: RadioParams,
    pub kb: KbParams,
    pub lenet: LeNetConfig,
    pub transformer: TransformerConfig,
    pub train: TrainConfig,
    pub fusion: BetaGrid,
    pub presets: Vec<CorruptionProfile>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled config is valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reseeds data generation, clustering and training together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.kb.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.world.validate()?;
        let cb = self.codebook.to_config();
        cb.validate()?;
        self.radio.validate()?;
        self.lenet.validate()?;
        self.transformer.validate()?;
        self.train.validate()?;
        self.fusion.values()?;
        if !(self.t_max_ms > 0.0) {
            return bad("t_max_ms must be positive".into());
        }
        let d = &self.data;
        if d.episode_len == 0 || d.seq_len == 0 {
            return bad("episode_len and seq_len must be positive".into());
        }
        if d.seq_len > self.transformer.max_len {
            return bad(format!("seq_len {} exceeds transformer max_len", d.seq_len));
        }
        for n in [d.n_train, d.n_val, d.n_test] {
            if n as u64 >= SPLIT_SEED_STRIDE {
                return bad("split sizes must stay below 2^32 frames".into());
            }
        }
        if self.lenet.classes != cb.num_beams || self.transformer.classes != cb.num_beams {
            return bad("classifier outputs must equal the number of beams".into());
        }
        if self.transformer.input != 3 {
            return bad("transformer input must be 3 (long, lat, previous beam)".into());
        }
        if self.lenet.extra_features != 0 {
            return bad("lenet.extra_features is set by the baseline, leave it at 0".into());
        }
        if self.kb.clusters == 0 || self.kb.divisions == 0 {
            return bad("kb clusters and divisions must be positive".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.presets {
            p.validate()?;
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate preset `{}`", p.name));
            }
        }
        self.preset(&d.train_corruption)?;
        for s in &self.scenarios {
            self.preset(s)?;
        }
        Ok(())
    }

    pub fn preset(&self, name: &str) -> Result<&CorruptionProfile> {
        self.presets
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
