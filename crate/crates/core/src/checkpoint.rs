//! Versioned JSON checkpoints holding the agent, its normalizer statistics and
//! the run configuration that produced them.
//!
//! Floats are written in shortest round-trip form, so a saved agent reloads
//! bit-exactly. Files are written to a sibling temporary path and renamed into
//! place, so readers never observe a partial checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Agent;
use crate::config::RunConfig;
use crate::curriculum::Stage;
use crate::env::NormalizerStats;

pub const FORMAT: &str = "droneam-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: checkpoint version {found} is not supported (expected {expected})")]
    Version {
        path: PathBuf,
        found: u64,
        expected: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Training episodes completed when the checkpoint was taken.
    pub episodes: usize,
    /// Curriculum stage in effect, if the run used one.
    pub stage: Option<Stage>,
    pub buffer_len: usize,
    pub config: RunConfig,
    pub normalizer: NormalizerStats,
    pub agent: Agent,
}

impl Checkpoint {
    pub fn new(
        config: RunConfig,
        agent: Agent,
        normalizer: NormalizerStats,
        episodes: usize,
        stage: Option<Stage>,
        buffer_len: usize,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            episodes,
            stage,
            buffer_len,
            config,
            normalizer,
            agent,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(self.to_json().as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(io)?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, CheckpointError> {
        let corrupt = |reason: String| CheckpointError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(corrupt("missing format header".into()));
        }
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("missing version".into()))?;
        if found != VERSION as u64 {
            return Err(CheckpointError::Version {
                path: path.to_path_buf(),
                found,
                expected: VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        ck.agent
            .check_consistency()
            .map_err(|e| corrupt(format!("inconsistent agent: {e}")))?;
        if !(ck.agent.actor.all_finite() && ck.agent.critics.iter().all(|c| c.online.all_finite()))
        {
            return Err(corrupt("non-finite parameters".into()));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }
}
