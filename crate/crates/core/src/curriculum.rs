//! Staged training from basic navigation (C1) to disturbed, variable-mass
//! deposition flights (C4).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::agents::train::{EpisodeLog, Trainer};
use crate::dynamics::WindParams;
use crate::env::{
    default_noise_halfwidth, EnvConfig, EnvError, RewardKind, TerminationStatus, OBS_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Single static waypoint, no noise, no deposition, distance reward.
    C1,
    /// Random starts, several waypoints, completion bonus, measurement noise.
    C2,
    /// C2 plus material deposition and variable initial mass.
    C3,
    /// C3 plus wind and a path-deviation penalty.
    C4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::C1, Stage::C2, Stage::C3, Stage::C4];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Stage::C1),
            "C2" => Ok(Stage::C2),
            "C3" => Ok(Stage::C3),
            "C4" => Ok(Stage::C4),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// The features each stage switches on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    /// Waypoints per episode from C2 on.
    pub waypoint_count: usize,
    /// Measurement noise from C2 on.
    pub noise_halfwidth: [f64; OBS_DIM],
    /// Relative spread of the initial mass from C3 on.
    pub mass_jitter: f64,
    /// Wind from C4 on.
    pub wind: WindParams,
    /// Deviation penalty coefficient from C4 on.
    pub deviation_penalty: f64,
}

impl Default for StageSettings {
    fn default() -> Self {
        Self {
            waypoint_count: 6,
            noise_halfwidth: default_noise_halfwidth(),
            mass_jitter: 0.2,
            wind: WindParams {
                mean_force: [0.1, 0.0, 0.0],
                gust_amplitude: [0.1, 0.1, 0.05],
            },
            deviation_penalty: 0.1,
        }
    }
}

/// Environment configuration for `stage`, derived from `base` which supplies
/// physics, thresholds, reward weights and the workspace.
pub fn stage_config(stage: Stage, base: &EnvConfig, settings: &StageSettings) -> EnvConfig {
    let mut c = base.clone();
    // C1
    c.task.waypoint_count = 1;
    c.task.randomize_start = false;
    c.task.mass_jitter = 0.0;
    c.episode.measurement_noise_halfwidth = [0.0; OBS_DIM];
    c.deposition.active = false;
    c.wind = WindParams::default();
    c.reward.kind = RewardKind::NegativeDistance;
    c.reward.deviation_penalty = 0.0;
    if stage >= Stage::C2 {
        c.task.waypoint_count = settings.waypoint_count;
        c.task.randomize_start = true;
        c.episode.measurement_noise_halfwidth = settings.noise_halfwidth;
        c.reward.kind = RewardKind::Exponential;
    }
    if stage >= Stage::C3 {
        c.deposition.active = true;
        c.task.mass_jitter = settings.mass_jitter;
    }
    if stage >= Stage::C4 {
        c.wind = settings.wind.clone();
        c.reward.deviation_penalty = settings.deviation_penalty;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromotionCriteria {
    /// Rolling window of recent episodes.
    pub window: usize,
    pub success_threshold: f64,
    pub min_episodes: usize,
}

impl Default for PromotionCriteria {
    fn default() -> Self {
        Self {
            window: 50,
            success_threshold: 0.8,
            min_episodes: 100,
        }
    }
}

impl PromotionCriteria {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("curriculum.criteria.window must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err("curriculum.criteria.success_threshold must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Rolling success ratio over the most recent `window` outcomes.
pub fn rolling_success(history: &[TerminationStatus], window: usize) -> f64 {
    let recent = &history[history.len().saturating_sub(window)..];
    if recent.is_empty() {
        return 0.0;
    }
    recent
        .iter()
        .filter(|s| **s == TerminationStatus::Success)
        .count() as f64
        / recent.len() as f64
}

/// `history` holds the outcomes of the episodes run in the current stage.
pub fn should_promote(history: &[TerminationStatus], criteria: &PromotionCriteria) -> bool {
    history.len() >= criteria.min_episodes.max(1)
        && rolling_success(history, criteria.window) >= criteria.success_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub from: Stage,
    pub to: Stage,
    /// Global index of the first episode run in `to`.
    pub episode: usize,
    pub buffer_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedEpisode {
    pub stage: Stage,
    #[serde(flatten)]
    pub log: EpisodeLog,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurriculumLog {
    pub episodes: Vec<StagedEpisode>,
    pub promotions: Vec<Promotion>,
    /// True when the final stage met the promotion criteria before the budget
    /// ran out.
    pub completed: bool,
}

impl CurriculumLog {
    /// Stage the trainer is in after the last episode, counting a promotion
    /// earned on that episode.
    pub fn final_stage(&self) -> Option<Stage> {
        match self.promotions.last() {
            Some(p) => Some(p.to),
            None => self.episodes.first().map(|e| e.stage),
        }
    }
}

/// Runs `trainer` through `stages` in order, promoting when
/// [`should_promote`] fires, for at most `budget` episodes in total. The
/// trainer's agent, replay buffer and normalizer persist across stages.
pub fn curriculum_train(
    trainer: &mut Trainer,
    base: &EnvConfig,
    settings: &StageSettings,
    stages: &[Stage],
    criteria: &PromotionCriteria,
    budget: usize,
) -> Result<CurriculumLog, EnvError> {
    curriculum_train_observed(trainer, base, settings, stages, criteria, budget, |_, _| {})
}

/// [`curriculum_train`] calling `on_episode` after every episode, before any
/// promotion it triggers takes effect.
#[allow(clippy::too_many_arguments)]
pub fn curriculum_train_observed(
    trainer: &mut Trainer,
    base: &EnvConfig,
    settings: &StageSettings,
    stages: &[Stage],
    criteria: &PromotionCriteria,
    budget: usize,
    mut on_episode: impl FnMut(&Trainer, &StagedEpisode),
) -> Result<CurriculumLog, EnvError> {
    assert!(
        stages.windows(2).all(|w| w[0] < w[1]),
        "stages must be strictly increasing"
    );
    let mut log = CurriculumLog::default();
    if stages.is_empty() {
        return Ok(log);
    }
    let mut current = 0;
    trainer
        .env
        .reconfigure(stage_config(stages[0], base, settings))?;
    let mut history: VecDeque<TerminationStatus> = VecDeque::new();
    let mut in_stage = 0usize;
    for _ in 0..budget {
        let episode = trainer.run_episode();
        history.push_back(episode.status);
        if history.len() > criteria.window {
            history.pop_front();
        }
        in_stage += 1;
        let staged = StagedEpisode {
            stage: stages[current],
            log: episode,
        };
        on_episode(trainer, &staged);
        log.episodes.push(staged);
        let window: Vec<TerminationStatus> = history.iter().copied().collect();
        let ready = in_stage >= criteria.min_episodes.max(1)
            && rolling_success(&window, criteria.window) >= criteria.success_threshold;
        if !ready {
            continue;
        }
        if current + 1 == stages.len() {
            log.completed = true;
            break;
        }
        log.promotions.push(Promotion {
            from: stages[current],
            to: stages[current + 1],
            episode: log.episodes.len(),
            buffer_len: trainer.buffer.len(),
        });
        current += 1;
        trainer
            .env
            .reconfigure(stage_config(stages[current], base, settings))?;
        history.clear();
        in_stage = 0;
    }
    Ok(log)
}
