//! Versioned policy checkpoints: full agent parameters, optimizer state, and
//! hyperparameters as structured JSON.

use super::sac::SacAgent;
use crate::env::AgentMode;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: AgentMode,
    pub agent: SacAgent,
}

impl Checkpoint {
    pub fn new(mode: AgentMode, agent: SacAgent) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode,
            agent,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    load_checkpoint_str(&std::fs::read_to_string(path)?)
}

pub fn load_checkpoint_str(json: &str) -> Result<Checkpoint, CheckpointError> {
    let ckpt: Checkpoint = serde_json::from_str(json)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(ckpt)
}
