//! Experiment configuration: serializable, hashable, validated before any
//! training starts.

use crate::controller::ControllerSettings;
use crate::env::{CabinetRanges, EnvParams};
use crate::rl::SacHyperparams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LearningCurves,
    TrainingSizeSweep,
    ModeComparison,
    SingularityDemo,
    RandomSplitAblation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Training seeds; one policy per seed per condition.
    pub seeds: Vec<u64>,
    pub train_cabinets: Vec<u64>,
    pub test_cabinets: Vec<u64>,
    /// Training-set sizes for the sweep (prefixes of `train_cabinets`).
    pub sizes: Vec<usize>,
    pub hyper: SacHyperparams,
    pub controller: ControllerSettings,
    pub ranges: CabinetRanges,
    pub env_params: EnvParams,
    pub noise_sigma: f64,
    pub total_steps: usize,
    /// Deterministic eval episodes per evaluation seed (3 seeds fixed).
    pub eval_episodes_per_seed: usize,
    /// Seeds for the random 15/10 split ablation.
    pub split_seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::LearningCurves,
            seeds: vec![0, 1, 2],
            train_cabinets: (0..15).collect(),
            test_cabinets: (15..25).collect(),
            sizes: vec![1, 5, 10, 15],
            hyper: SacHyperparams::default(),
            controller: ControllerSettings::default(),
            ranges: CabinetRanges::default(),
            env_params: EnvParams::default(),
            noise_sigma: 0.0,
            total_steps: 150_000,
            eval_episodes_per_seed: 100,
            split_seeds: vec![0, 1, 2],
            out_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("need at least one training seed".into()));
        }
        if self.train_cabinets.is_empty() || self.test_cabinets.is_empty() {
            return Err(ConfigError::Invalid("cabinet pools must be non-empty".into()));
        }
        for t in &self.test_cabinets {
            if self.train_cabinets.contains(t) {
                return Err(ConfigError::Invalid(format!(
                    "cabinet seed {t} appears in both train and test pools"
                )));
            }
        }
        if self.sizes.is_empty() {
            return Err(ConfigError::Invalid("sizes must be non-empty".into()));
        }
        for w in self.sizes.windows(2) {
            if w[0] >= w[1] {
                return Err(ConfigError::Invalid(
                    "sizes must be strictly ascending".into(),
                ));
            }
        }
        if self.sizes[0] == 0 {
            return Err(ConfigError::Invalid("size 0 is not a training set".into()));
        }
        if *self.sizes.last().unwrap() > self.train_cabinets.len() {
            return Err(ConfigError::Invalid(format!(
                "largest size {} exceeds the {} available training cabinets",
                self.sizes.last().unwrap(),
                self.train_cabinets.len()
            )));
        }
        let mut ss = self.split_seeds.clone();
        ss.sort_unstable();
        ss.dedup();
        if ss.len() != self.split_seeds.len() {
            return Err(ConfigError::Invalid("duplicate split seeds".into()));
        }
        self.hyper
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ranges
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding; embedded in every report
    /// so outputs are traceable to the exact configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Output directory, honoring the `WBMANIP_OUT_ROOT` override.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var_os("WBMANIP_OUT_ROOT") {
            Some(root) => PathBuf::from(root).join(&self.out_dir),
            None => PathBuf::from(&self.out_dir),
        }
    }
}
