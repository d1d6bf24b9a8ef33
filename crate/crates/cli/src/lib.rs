//! Implementation of the `droneam` subcommands. Each command takes a fully
//! resolved configuration and writes its artifacts under an output directory.
//!
//! Training output layout:
//!
//! ```text
//! <out>/config.toml                 resolved configuration
//! <out>/episodes.csv                one row per training episode
//! <out>/stages.csv                  promotions (curriculum runs only)
//! <out>/checkpoints/ep_000100.json  periodic checkpoints
//! <out>/checkpoint.json             final checkpoint
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use droneam::agents::train::{EpisodeLog, Trainer};
use droneam::agents::Agent;
use droneam::checkpoint::Checkpoint;
use droneam::config::RunConfig;
use droneam::curriculum::{curriculum_train_observed, Promotion, Stage, StagedEpisode};
use droneam::env::{Env, NormalizerStats, TerminationStatus};
use droneam::eval::{
    compute_metrics, run_trials, write_records_csv, write_summary, write_trajectories,
    MetricsSummary, TrialRecord,
};
use droneam::seeding::derive_seed;

pub const CONFIG_ECHO: &str = "config.toml";
pub const EPISODE_LOG: &str = "episodes.csv";
pub const STAGE_LOG: &str = "stages.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const TRIALS_CSV: &str = "trials.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRAJECTORY_JSON: &str = "trajectory.json";

#[derive(Debug, Serialize)]
struct EpisodeRow<'a> {
    episode: usize,
    stage: Option<Stage>,
    reward: f64,
    steps: usize,
    status: &'a str,
    final_error: f64,
    updates: usize,
    critic_loss: Option<f64>,
    actor_loss: Option<f64>,
}

impl<'a> EpisodeRow<'a> {
    fn new(log: &'a EpisodeLog, stage: Option<Stage>) -> Self {
        Self {
            episode: log.episode,
            stage,
            reward: log.reward,
            steps: log.steps,
            status: log.status.as_str(),
            final_error: log.final_error,
            updates: log.updates,
            critic_loss: log.critic_loss,
            actor_loss: log.actor_loss,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub agent: Agent,
    pub normalizer: NormalizerStats,
    pub episodes: Vec<EpisodeLog>,
    pub promotions: Option<Vec<Promotion>>,
    pub final_stage: Option<Stage>,
    pub checkpoint: PathBuf,
}

impl TrainReport {
    pub fn success_count(&self) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.status == TerminationStatus::Success)
            .count()
    }
}

struct Recorder {
    out: PathBuf,
    config: RunConfig,
    log: csv::Writer<fs::File>,
    every: usize,
}

impl Recorder {
    fn episode(&mut self, trainer: &Trainer, log: &EpisodeLog, stage: Option<Stage>) -> Result<()> {
        self.log.serialize(EpisodeRow::new(log, stage))?;
        let done = log.episode + 1;
        if self.every > 0 && done.is_multiple_of(self.every) {
            self.log.flush()?;
            let dir = self.out.join("checkpoints");
            fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            checkpoint(&self.config, trainer, stage)
                .save(&dir.join(format!("ep_{done:06}.json")))?;
        }
        Ok(())
    }
}

fn checkpoint(config: &RunConfig, trainer: &Trainer, stage: Option<Stage>) -> Checkpoint {
    let mut normalizer = trainer.env.normalizer().clone();
    normalizer.freeze();
    Checkpoint::new(
        config.clone(),
        trainer.agent.clone(),
        normalizer,
        trainer.episodes_run(),
        stage,
        trainer.buffer.len(),
    )
}

/// Builds the trainer for `config`; the environment starts on the first
/// curriculum stage or, without the curriculum, on the target task.
pub fn build_trainer(config: &RunConfig) -> Result<Trainer> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let agent = Agent::new(config.agent.clone(), &mut rng);
    let env_config = if config.curriculum.enabled {
        config.stage_env(config.curriculum.stages[0])
    } else {
        config.target_env()
    };
    let env = Env::new(env_config, NormalizerStats::default())?;
    Ok(Trainer::new(
        agent,
        env,
        config.training.clone(),
        config.seed,
    ))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).with_context(|| path.display().to_string())?;
    fs::rename(&tmp, path).with_context(|| path.display().to_string())
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    config.validate()?;
    let out = config.output.dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join(CONFIG_ECHO), config.to_toml().as_bytes())?;
    let log_path = out.join(EPISODE_LOG);
    let mut recorder = Recorder {
        out: out.clone(),
        config: config.clone(),
        log: csv::Writer::from_path(&log_path).with_context(|| log_path.display().to_string())?,
        every: config.output.checkpoint_every,
    };
    let mut trainer = build_trainer(config)?;
    let budget = config.training.episodes;
    let mut failure = None;

    let (episodes, promotions, final_stage) = if config.curriculum.enabled {
        let c = &config.curriculum;
        let log = curriculum_train_observed(
            &mut trainer,
            &config.env,
            &c.settings,
            &c.stages,
            &c.criteria,
            budget,
            |t: &Trainer, e: &StagedEpisode| {
                if failure.is_none() {
                    failure = recorder.episode(t, &e.log, Some(e.stage)).err();
                }
            },
        )?;
        let final_stage = log.final_stage();
        let episodes = log.episodes.into_iter().map(|e| e.log).collect();
        (episodes, Some(log.promotions), final_stage)
    } else {
        let mut episodes = Vec::with_capacity(budget);
        for _ in 0..budget {
            let e = trainer.run_episode();
            recorder.episode(&trainer, &e, None)?;
            episodes.push(e);
        }
        (episodes, None, None)
    };
    if let Some(e) = failure {
        return Err(e);
    }
    recorder.log.flush()?;
    if let Some(promotions) = &promotions {
        let path = out.join(STAGE_LOG);
        let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
        for p in promotions {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    let ck = checkpoint(config, &trainer, final_stage);
    let path = out.join(FINAL_CHECKPOINT);
    ck.save(&path)?;
    Ok(TrainReport {
        agent: ck.agent,
        normalizer: ck.normalizer,
        episodes,
        promotions,
        final_stage,
        checkpoint: path,
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub summary: MetricsSummary,
    pub records: Vec<TrialRecord>,
}

/// Evaluates the checkpoint on its run's target task. Nothing is written
/// unless the checkpoint loads.
pub fn cmd_eval(checkpoint: &Path, trials: usize, seed: u64, out: &Path) -> Result<EvalReport> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let ck = Checkpoint::load(checkpoint)?;
    let env_config = ck.config.target_env();
    let records = run_trials(
        &mut &ck.agent,
        &env_config,
        &ck.normalizer,
        trials,
        seed,
        false,
    )?;
    let summary = compute_metrics(&records)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_records_csv(&records, &out.join(TRIALS_CSV))?;
    write_summary(&summary, &out.join(SUMMARY_JSON))?;
    Ok(EvalReport { summary, records })
}

/// Flies one test episode over `waypoints` random waypoints with deposition
/// active and writes the trajectory.
pub fn cmd_demo(checkpoint: &Path, waypoints: usize, seed: u64, out: &Path) -> Result<TrialRecord> {
    if waypoints == 0 {
        bail!("--waypoints must be at least 1");
    }
    let ck = Checkpoint::load(checkpoint)?;
    let mut env_config = ck.config.target_env();
    env_config.task.waypoint_count = waypoints;
    env_config.deposition.active = true;
    let mut records = run_trials(&mut &ck.agent, &env_config, &ck.normalizer, 1, seed, true)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trajectories(&records, &out.join(TRAJECTORY_JSON))?;
    Ok(records.remove(0))
}

pub fn format_summary(s: &MetricsSummary) -> String {
    format!(
        "trials            {}\n\
         mean reward       {:.4}\n\
         reward std        {:.4}\n\
         mean error (m)    {:.4}\n\
         precision (m)     {:.4}\n\
         success ratio     {:.1}%",
        s.trials, s.mean_reward, s.reward_std, s.mean_error, s.precision, s.success_ratio
    )
}
