//! Episode-driven training: act with exploration, store transitions, learn in
//! batches at episode boundaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, Batch, ReplayBuffer, Transition};
use crate::env::{Env, NormalizerStats, ResetMode, TerminationStatus};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub episodes: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub max_minibatches_per_epoch: usize,
    /// No learning happens until the buffer holds this many transitions.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub learn: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            episodes: 1000,
            minibatch_size: 256,
            epochs: 3,
            max_minibatches_per_epoch: 100,
            warmup: 256,
            buffer_capacity: 1_000_000,
            learn: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.minibatch_size == 0 || self.epochs == 0 || self.buffer_capacity == 0 {
            return Err(
                "training.minibatch_size, epochs and buffer_capacity must be positive".into(),
            );
        }
        if self.warmup < self.minibatch_size {
            return Err("training.warmup must be at least one mini-batch".into());
        }
        Ok(())
    }

    /// Optimizer steps to run at the end of an episode given the buffer fill.
    /// Each epoch runs as many mini-batches as the buffer can fill without
    /// overlap, capped at `max_minibatches_per_epoch`.
    pub fn updates_for(&self, buffer_len: usize) -> usize {
        if !self.learn || buffer_len < self.warmup {
            return 0;
        }
        let per_epoch = (buffer_len / self.minibatch_size)
            .min(self.max_minibatches_per_epoch)
            .max(1);
        self.epochs * per_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub status: TerminationStatus,
    /// Distance to the active waypoint when the episode ended.
    pub final_error: f64,
    pub updates: usize,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
}

/// Owns everything a training run mutates. Curriculum training drives one
/// trainer across stages so the buffer, agent and statistics persist.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub env: Env,
    pub schedule: TrainSchedule,
    agent_rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    episodes: usize,
    batch: Batch,
}

impl Trainer {
    pub fn new(agent: Agent, env: Env, schedule: TrainSchedule, seed: u64) -> Self {
        Self {
            buffer: ReplayBuffer::new(schedule.buffer_capacity),
            batch: Batch::with_capacity(schedule.minibatch_size),
            agent,
            env,
            schedule,
            agent_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
            env_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2)),
            episodes: 0,
        }
    }

    pub fn episodes_run(&self) -> usize {
        self.episodes
    }

    pub fn run_episode(&mut self) -> EpisodeLog {
        let dt = self.env.config().physics.dt;
        let mut obs = self.env.reset(ResetMode::Training, &mut self.env_rng);
        let mut noise = self.agent.new_exploration();
        noise.reset();
        let mut total = 0.0;
        let status = loop {
            let action =
                self.agent
                    .select_action(&obs, Some((&mut noise, dt)), &mut self.agent_rng);
            let out = self.env.step(action).expect("episode is running");
            total += out.reward;
            self.buffer.push(Transition {
                state: obs.0,
                action: action.0,
                reward: out.reward,
                next_state: out.observation.0,
                done: out.status.cuts_bootstrap(),
            });
            obs = out.observation;
            if out.status.is_terminal() {
                break out.status;
            }
        };
        let final_error = (self.env.active_target() - self.env.state().position).norm();
        let (updates, critic_loss, actor_loss) = self.learn();
        let log = EpisodeLog {
            episode: self.episodes,
            reward: total,
            steps: self.env.steps(),
            status,
            final_error,
            updates,
            critic_loss,
            actor_loss,
        };
        self.episodes += 1;
        log
    }

    /// Runs the end-of-episode learning budget. Returns the number of
    /// optimizer steps and the mean losses over them.
    pub fn learn(&mut self) -> (usize, Option<f64>, Option<f64>) {
        let n = self.schedule.updates_for(self.buffer.len());
        let (mut critic_sum, mut actor_sum, mut actor_n) = (0.0, 0.0, 0usize);
        for _ in 0..n {
            self.buffer
                .sample_into(
                    self.schedule.minibatch_size,
                    &mut self.agent_rng,
                    &mut self.batch,
                )
                .expect("warmup guarantees enough data");
            let l = self.agent.update(&self.batch, &mut self.agent_rng);
            critic_sum += l.critic[..self.agent.critics.len()].iter().sum::<f64>()
                / self.agent.critics.len() as f64;
            if let Some(a) = l.actor {
                actor_sum += a;
                actor_n += 1;
            }
        }
        let critic = (n > 0).then(|| critic_sum / n as f64);
        let actor = (actor_n > 0).then(|| actor_sum / actor_n as f64);
        (n, critic, actor)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub normalizer: NormalizerStats,
    pub log: Vec<EpisodeLog>,
    pub buffer_len: usize,
}

/// Plain (single task) training for `schedule.episodes` episodes.
pub fn train_loop(agent: Agent, env: Env, schedule: TrainSchedule, seed: u64) -> TrainOutcome {
    let episodes = schedule.episodes;
    let mut trainer = Trainer::new(agent, env, schedule, seed);
    let log = (0..episodes).map(|_| trainer.run_episode()).collect();
    TrainOutcome {
        buffer_len: trainer.buffer.len(),
        normalizer: trainer.env.normalizer().clone(),
        agent: trainer.agent,
        log,
    }
}
