//! Run configuration: one TOML document covering agent, training schedule,
//! environment, curriculum, evaluation and output settings.
//!
//! Every table is optional; missing keys take the reference defaults and
//! unknown keys are rejected. Dotted-key overrides such as
//! `agent.discount=0.95` or `env.task.waypoint_count=6` are applied on top of
//! the parsed file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::train::TrainSchedule;
use crate::agents::{AgentConfig, Algorithm};
use crate::curriculum::{stage_config, PromotionCriteria, Stage, StageSettings};
use crate::env::EnvConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub enabled: bool,
    /// Stages in training order. Without the curriculum the agent trains
    /// directly on the last stage.
    pub stages: Vec<Stage>,
    pub criteria: PromotionCriteria,
    pub settings: StageSettings,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            stages: Stage::ALL.to_vec(),
            criteria: PromotionCriteria::default(),
            settings: StageSettings::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn target_stage(&self) -> Stage {
        *self
            .stages
            .last()
            .expect("validated stage list is non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed: u64,
    /// Waypoints per demonstration flight.
    pub demo_waypoints: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 1_000_000,
            demo_waypoints: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Episodes between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub agent: AgentConfig,
    pub training: TrainSchedule,
    pub env: EnvConfig,
    pub curriculum: CurriculumConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    /// Applies `key=value` overrides in order. Values are parsed as TOML
    /// literals and fall back to plain strings, so `agent.algorithm=ddpg`
    /// and `agent.hidden_sizes=[64, 64]` both work.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut root =
            toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(raw.to_string()))?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(str::is_empty) {
                return Err(ConfigError::Override(raw.to_string()));
            }
            set_path(&mut root, key, parse_value(value.trim()))?;
        }
        root.try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent.validate().map_err(ConfigError::Invalid)?;
        self.training.validate().map_err(ConfigError::Invalid)?;
        self.curriculum
            .criteria
            .validate()
            .map_err(ConfigError::Invalid)?;
        let stages = &self.curriculum.stages;
        if stages.is_empty() || !stages.windows(2).all(|w| w[0] < w[1]) {
            return Err(ConfigError::Invalid(
                "curriculum.stages must be a non-empty, strictly increasing list".into(),
            ));
        }
        if self.curriculum.settings.waypoint_count == 0 {
            return Err(ConfigError::Invalid(
                "curriculum.settings.waypoint_count must be >= 1".into(),
            ));
        }
        for stage in stages {
            self.stage_env(*stage)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("stage {stage}: {e}")))?;
        }
        if self.eval.trials == 0 {
            return Err(ConfigError::Invalid("eval.trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn algorithm(&self) -> Algorithm {
        self.agent.algorithm
    }

    pub fn stage_env(&self, stage: Stage) -> EnvConfig {
        stage_config(stage, &self.env, &self.curriculum.settings)
    }

    /// The task the run is ultimately trained and evaluated on.
    pub fn target_env(&self) -> EnvConfig {
        self.stage_env(self.curriculum.target_stage())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            ConfigError::Invalid(format!("{} is not a table", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("key has at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardKind;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.agent.discount, 0.99);
        assert_eq!(c.agent.learning_rate, 1e-3);
        assert_eq!(c.agent.gradient_threshold, 1.0);
        assert_eq!(c.agent.tau, 5e-3);
        assert_eq!(c.agent.hidden_sizes, vec![400, 300]);
        assert_eq!(c.training.minibatch_size, 256);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.max_minibatches_per_epoch, 100);
        assert_eq!(c.training.buffer_capacity, 1_000_000);
        assert_eq!(c.env.physics.dt, 0.01);
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::default()
            .with_overrides(&["agent.algorithm=ddpg", "env.wind.mean_force=[0.5, 0, 0]"])
            .unwrap();
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert!(text.contains("discount = 0.99"));
        assert!(text.contains("minibatch_size = 256"));
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "seed=7",
                "agent.hidden_sizes=[64, 64]",
                "agent.algorithm=ddpg",
                "env.reward.kind=negative_distance",
                "curriculum.stages=[\"C1\", \"C2\"]",
                "output.dir=/tmp/x",
            ])
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.agent.hidden_sizes, vec![64, 64]);
        assert_eq!(c.algorithm(), Algorithm::Ddpg);
        assert_eq!(c.env.reward.kind, RewardKind::NegativeDistance);
        assert_eq!(c.curriculum.stages, vec![Stage::C1, Stage::C2]);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = RunConfig::from_toml("[agent]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let err = RunConfig::default()
            .with_overrides(&["env.task.waypoint_cnt=3"])
            .unwrap_err();
        assert!(err.to_string().contains("waypoint_cnt"), "{err}");
        assert!(matches!(
            RunConfig::default().with_overrides(&["seed"]),
            Err(ConfigError::Override(_))
        ));
        let err = RunConfig::from_toml("[training]\nepochs = \"three\"\n").unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn validation() {
        let bad = RunConfig::default()
            .with_overrides(&["curriculum.stages=[\"C2\", \"C1\"]"])
            .unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::default()
            .with_overrides(&["agent.tau=0"])
            .unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::default()
            .with_overrides(&["training.warmup=10"])
            .unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn target_stage_env() {
        let c = RunConfig::default();
        assert_eq!(c.target_env(), c.stage_env(Stage::C4));
        let c1 = c.with_overrides(&["curriculum.stages=[\"C1\"]"]).unwrap();
        assert_eq!(c1.target_env().task.waypoint_count, 1);
    }
}
