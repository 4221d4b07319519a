//! Experiment orchestration: `gen → train → betasearch → eval → report`.
//!
//! Every command reads and writes a run directory:
//!
//! ```text
//! data/gen.json                       generation summary + config hash
//! data/train/                         manifest.csv + masks/
//! data/{val,test}/<scenario>/
//! artifacts/                          codebook, KB, checkpoints, histories
//! betas/<scenario>.json, <scenario>_surface.csv
//! reports/<scenario>.json, <scenario>.csv
//! timing/<scenario>.json              latencies (not reproducible, kept apart)
//! run_manifest.json
//! ```
//!
//! Reports contain no wall-clock data, so a rerun with the same config
//! reproduces them byte for byte.

mod commands;
mod config;
mod features;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub use commands::{
    cmd_betasearch, cmd_eval, cmd_gen, cmd_report, cmd_train, GenSummary, ScenarioReport, TimingReport, TrainSummary,
};
pub use config::{CodebookSection, DataConfig, ExperimentConfig, DEFAULT_CONFIG, SPLIT_SEED_STRIDE};
pub use features::{sequences_for, transformer_step};

/// Paths inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn gen_summary(&self) -> PathBuf {
        self.root.join("data/gen.json")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("data/train")
    }

    pub fn val_dir(&self, scenario: &str) -> PathBuf {
        self.root.join("data/val").join(scenario)
    }

    pub fn test_dir(&self, scenario: &str) -> PathBuf {
        self.root.join("data/test").join(scenario)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join("artifacts").join(name)
    }

    pub fn betas(&self, scenario: &str) -> PathBuf {
        self.root.join("betas").join(format!("{scenario}.json"))
    }

    pub fn surface(&self, scenario: &str) -> PathBuf {
        self.root.join("betas").join(format!("{scenario}_surface.csv"))
    }

    pub fn report_json(&self, scenario: &str) -> PathBuf {
        self.root.join("reports").join(format!("{scenario}.json"))
    }

    pub fn report_csv(&self, scenario: &str) -> PathBuf {
        self.root.join("reports").join(format!("{scenario}.csv"))
    }

    pub fn timing(&self, scenario: &str) -> PathBuf {
        self.root.join("timing").join(format!("{scenario}.json"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

pub const CODEBOOK: &str = "codebook.json";
pub const KB: &str = "kb.json";
pub const LENET: &str = "lenet.ckpt";
pub const TRANSFORMER: &str = "transformer.ckpt";
pub const BASELINE1: &str = "baseline1.ckpt";
pub const BASELINE2: &str = "baseline2.ckpt";
pub const HISTORY: &str = "train_history.json";

/// Bookkeeping for a run directory; rewritten by every command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    /// Artifact name → path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    /// Command → seconds of its most recent run.
    pub wall_clock_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load_or_new(layout: &Layout, config_hash: &str) -> Result<Self> {
        let path = layout.manifest();
        if path.exists() {
            let m: Self = read_json(&path)?;
            if m.config_hash != config_hash {
                return Err(Error::ConfigHashMismatch(m.config_hash, config_hash.to_string()));
            }
            Ok(m)
        } else {
            Ok(Self {
                config_hash: config_hash.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..Self::default()
            })
        }
    }

    pub fn record(&mut self, layout: &Layout, name: &str, path: &Path) {
        let rel = path.strip_prefix(layout.root()).unwrap_or(path);
        self.artifacts
            .insert(name.to_string(), rel.to_string_lossy().into_owned());
    }

    /// Writes the manifest after checking that every listed artifact exists.
    pub fn save(&self, layout: &Layout) -> Result<()> {
        for rel in self.artifacts.values() {
            let p = layout.root().join(rel);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
        }
        write_json(&layout.manifest(), self)
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
