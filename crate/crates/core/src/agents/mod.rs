//! DDPG and TD3 actor-critic agents.
//!
//! Both share one [`Agent`] type: DDPG carries a single critic, TD3 two.
//! Critics see the normalized observation concatenated with the raw action.

pub mod noise;
pub mod replay;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, RawAction, ACTION_DIM, OBS_DIM};
use crate::nn::{Activation, AdamState, DenseNetwork, NnError};

pub use noise::{Exploration, ExplorationModel, OuNoise, SmoothingPolicy};
pub use replay::{Batch, InsufficientData, ReplayBuffer, Transition};

pub const CRITIC_INPUT: usize = OBS_DIM + ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Td3,
}

impl Algorithm {
    pub fn critic_count(self) -> usize {
        match self {
            Algorithm::Ddpg => 1,
            Algorithm::Td3 => 2,
        }
    }

    /// Exploration model assigned to each algorithm in the reference setup.
    pub fn default_exploration(self) -> ExplorationModel {
        match self {
            Algorithm::Ddpg => ExplorationModel::Gaussian,
            Algorithm::Td3 => ExplorationModel::OrnsteinUhlenbeck,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Ok(Algorithm::Ddpg),
            "td3" => Ok(Algorithm::Td3),
            other => Err(format!(
                "unknown algorithm {other:?} (expected ddpg or td3)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    /// Global L2 norm limit applied to every gradient before Adam.
    pub gradient_threshold: f64,
    pub discount: f64,
    /// Target smoothing factor for Polyak averaging.
    pub tau: f64,
    pub policy_update_frequency: u64,
    pub target_update_frequency: u64,
    /// `None` selects the algorithm's default model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploration_model: Option<ExplorationModel>,
    pub exploration_std: f64,
    pub mean_attraction: f64,
    pub target_smoothing: SmoothingPolicy,
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            hidden_sizes: vec![400, 300],
            learning_rate: 1e-3,
            gradient_threshold: 1.0,
            discount: 0.99,
            tau: 5e-3,
            policy_update_frequency: 1,
            target_update_frequency: 1,
            exploration_model: None,
            exploration_std: 0.1,
            mean_attraction: 1.0,
            target_smoothing: SmoothingPolicy::default(),
        }
    }

    pub fn exploration(&self) -> ExplorationModel {
        self.exploration_model
            .unwrap_or_else(|| self.algorithm.default_exploration())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err("agent.hidden_sizes must be non-empty and positive".into());
        }
        let checks = [
            ("agent.learning_rate", self.learning_rate > 0.0),
            ("agent.gradient_threshold", self.gradient_threshold > 0.0),
            ("agent.discount", (0.0..=1.0).contains(&self.discount)),
            ("agent.tau", self.tau > 0.0 && self.tau <= 1.0),
            (
                "agent.policy_update_frequency",
                self.policy_update_frequency >= 1,
            ),
            (
                "agent.target_update_frequency",
                self.target_update_frequency >= 1,
            ),
            ("agent.exploration_std", self.exploration_std >= 0.0),
            ("agent.mean_attraction", self.mean_attraction >= 0.0),
            (
                "agent.target_smoothing.limit",
                self.target_smoothing.limit >= 0.0,
            ),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(format!("{name} is out of range"));
            }
        }
        Ok(())
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::new(Algorithm::Td3)
    }
}

/// Online critic with its target copy and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub online: DenseNetwork,
    pub target: DenseNetwork,
    pub optimizer: AdamState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: DenseNetwork,
    pub actor_target: DenseNetwork,
    pub actor_optimizer: AdamState,
    pub critics: Vec<Critic>,
    /// Number of critic updates performed so far.
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    /// Mean-squared TD error per critic.
    pub critic: [f64; 2],
    /// `-mean Q1(s, actor(s))` when the actor was updated.
    pub actor: Option<f64>,
}

/// Twin-critic targets next to the single-critic targets built from the same
/// smoothed actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinTargets {
    pub y: Vec<f64>,
    pub y_critic1: Vec<f64>,
    pub y_critic2: Vec<f64>,
}

fn concat_rows(states: &[f64], actions: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * CRITIC_INPUT);
    for i in 0..n {
        out.extend_from_slice(&states[i * OBS_DIM..(i + 1) * OBS_DIM]);
        out.extend_from_slice(&actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
    }
    out
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Self {
        let mut actor_sizes = vec![OBS_DIM];
        actor_sizes.extend(&config.hidden_sizes);
        actor_sizes.push(ACTION_DIM);
        let actor = DenseNetwork::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng);

        let mut critic_sizes = vec![CRITIC_INPUT];
        critic_sizes.extend(&config.hidden_sizes);
        critic_sizes.push(1);
        let critics = (0..config.algorithm.critic_count())
            .map(|_| {
                let online =
                    DenseNetwork::new(&critic_sizes, Activation::Relu, Activation::Identity, rng);
                Critic {
                    target: online.clone(),
                    optimizer: AdamState::new(&online, config.learning_rate),
                    online,
                }
            })
            .collect();
        Self {
            actor_target: actor.clone(),
            actor_optimizer: AdamState::new(&actor, config.learning_rate),
            actor,
            critics,
            config,
            updates: 0,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    /// Consistency of shapes between networks, targets and optimizers.
    pub fn check_consistency(&self) -> Result<(), NnError> {
        let ok = self.actor.same_architecture(&self.actor_target)
            && self.actor_optimizer.matches(&self.actor)
            && self.actor.input_dim() == OBS_DIM
            && self.actor.output_dim() == ACTION_DIM
            && self.critics.len() == self.config.algorithm.critic_count()
            && self.critics.iter().all(|c| {
                c.online.same_architecture(&c.target)
                    && c.optimizer.matches(&c.online)
                    && c.online.input_dim() == CRITIC_INPUT
                    && c.online.output_dim() == 1
            });
        if ok {
            Ok(())
        } else {
            Err(NnError::Architecture)
        }
    }

    pub fn policy(&self, obs: &Observation) -> RawAction {
        let out = self
            .actor
            .predict(obs.as_slice())
            .expect("observation width matches actor");
        RawAction([out[0], out[1], out[2]])
    }

    /// Deterministic policy output, optionally perturbed by the exploration
    /// process, clamped to `[-1, 1]^3`.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        exploration: Option<(&mut Exploration, f64)>,
        rng: &mut R,
    ) -> RawAction {
        let mut a = self.policy(obs);
        if let Some((noise, dt)) = exploration {
            let n = noise.sample(dt, rng);
            for (v, e) in a.0.iter_mut().zip(n) {
                *v += e;
            }
        }
        a.clamped()
    }

    pub fn new_exploration(&self) -> Exploration {
        Exploration::new(
            self.config.exploration(),
            self.config.exploration_std,
            self.config.mean_attraction,
        )
    }

    fn q_values(net: &DenseNetwork, input: &[f64], n: usize) -> Vec<f64> {
        net.forward(input, n)
            .expect("critic input width")
            .output()
            .to_vec()
    }

    /// Bootstrapped targets for DDPG: `r + gamma * Q'(s', actor'(s'))`, cut at
    /// true terminations.
    pub fn ddpg_target(&self, batch: &Batch) -> Vec<f64> {
        let n = batch.len;
        let next_actions = self
            .actor_target
            .forward(&batch.next_states, n)
            .expect("state width")
            .output()
            .to_vec();
        let input = concat_rows(&batch.next_states, &next_actions, n);
        let q = Self::q_values(&self.critics[0].target, &input, n);
        self.bootstrap(batch, |i| q[i])
    }

    fn bootstrap(&self, batch: &Batch, next_value: impl Fn(usize) -> f64) -> Vec<f64> {
        let gamma = self.config.discount;
        (0..batch.len)
            .map(|i| {
                if batch.dones[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + gamma * next_value(i)
                }
            })
            .collect()
    }

    fn smoothed_next_actions<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        smoothing: &SmoothingPolicy,
        rng: &mut R,
    ) -> Vec<f64> {
        let mut a = self
            .actor_target
            .forward(&batch.next_states, batch.len)
            .expect("state width")
            .output()
            .to_vec();
        for v in &mut a {
            *v = (*v + smoothing.sample(rng)).clamp(-1.0, 1.0);
        }
        a
    }

    /// TD3 targets with target-policy smoothing and the twin-critic minimum,
    /// alongside the per-critic targets computed from the same actions.
    pub fn td3_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        smoothing: &SmoothingPolicy,
        rng: &mut R,
    ) -> TwinTargets {
        assert_eq!(self.critics.len(), 2, "TD3 targets need two critics");
        let n = batch.len;
        let actions = self.smoothed_next_actions(batch, smoothing, rng);
        let input = concat_rows(&batch.next_states, &actions, n);
        let q1 = Self::q_values(&self.critics[0].target, &input, n);
        let q2 = Self::q_values(&self.critics[1].target, &input, n);
        TwinTargets {
            y: self.bootstrap(batch, |i| q1[i].min(q2[i])),
            y_critic1: self.bootstrap(batch, |i| q1[i]),
            y_critic2: self.bootstrap(batch, |i| q2[i]),
        }
    }

    pub fn td3_target<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        smoothing: &SmoothingPolicy,
        rng: &mut R,
    ) -> Vec<f64> {
        self.td3_targets(batch, smoothing, rng).y
    }

    /// One MSE regression step of critic `k` towards `targets`. Returns the
    /// loss before the step.
    fn fit_critic(&mut self, k: usize, input: &[f64], targets: &[f64]) -> f64 {
        let n = targets.len();
        let threshold = self.config.gradient_threshold;
        let critic = &mut self.critics[k];
        let cache = critic.online.forward(input, n).expect("critic input width");
        let q = cache.output();
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(n);
        for (qi, yi) in q.iter().zip(targets) {
            let e = qi - yi;
            loss += e * e;
            grad.push(2.0 * e / n as f64);
        }
        let (mut g, _) = critic.online.backward(&cache, &grad).expect("fresh cache");
        g.clip_global_norm(threshold);
        critic
            .optimizer
            .step(&mut critic.online, &g)
            .expect("optimizer matches critic");
        loss / n as f64
    }

    /// Deterministic policy gradient step ascending `Q1(s, actor(s))`. Returns
    /// the actor loss `-mean Q1` before the step.
    fn improve_actor(&mut self, states: &[f64], n: usize) -> f64 {
        let threshold = self.config.gradient_threshold;
        let actor_cache = self.actor.forward(states, n).expect("state width");
        let input = concat_rows(states, actor_cache.output(), n);
        let critic = &self.critics[0].online;
        let critic_cache = critic.forward(&input, n).expect("critic input width");
        let loss = -critic_cache.output().iter().sum::<f64>() / n as f64;
        let dq = critic
            .input_gradient(&critic_cache, &vec![-1.0 / n as f64; n])
            .expect("fresh cache");
        let mut da = Vec::with_capacity(n * ACTION_DIM);
        for row in dq.chunks_exact(CRITIC_INPUT) {
            da.extend_from_slice(&row[OBS_DIM..]);
        }
        let (mut g, _) = self.actor.backward(&actor_cache, &da).expect("fresh cache");
        g.clip_global_norm(threshold);
        self.actor_optimizer
            .step(&mut self.actor, &g)
            .expect("optimizer matches actor");
        loss
    }

    fn update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target
            .soft_update(&self.actor, tau)
            .expect("target mirrors actor");
        for c in &mut self.critics {
            c.target
                .soft_update(&c.online, tau)
                .expect("target mirrors critic");
        }
    }

    /// Single-critic update: critic regression, actor ascent, then target
    /// tracking at the configured frequency.
    pub fn ddpg_update(&mut self, batch: &Batch) -> Losses {
        assert!(batch.len >= 1, "empty batch");
        let index = self.updates;
        let y = self.ddpg_target(batch);
        let input = concat_rows(&batch.states, &batch.actions, batch.len);
        let critic_loss = self.fit_critic(0, &input, &y);
        let actor = index
            .is_multiple_of(self.config.policy_update_frequency)
            .then(|| self.improve_actor(&batch.states, batch.len));
        if index.is_multiple_of(self.config.target_update_frequency) {
            self.update_targets();
        }
        self.updates += 1;
        Losses {
            critic: [critic_loss, 0.0],
            actor,
        }
    }

    /// Twin-critic update. The actor and all targets move only on updates
    /// whose index is a multiple of the policy update frequency.
    pub fn td3_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Losses {
        assert!(batch.len >= 1, "empty batch");
        let index = self.updates;
        let smoothing = self.config.target_smoothing.clone();
        let y = self.td3_target(batch, &smoothing, rng);
        let input = concat_rows(&batch.states, &batch.actions, batch.len);
        let l1 = self.fit_critic(0, &input, &y);
        let l2 = self.fit_critic(1, &input, &y);
        let mut actor = None;
        if index.is_multiple_of(self.config.policy_update_frequency) {
            actor = Some(self.improve_actor(&batch.states, batch.len));
            if index.is_multiple_of(self.config.target_update_frequency) {
                self.update_targets();
            }
        }
        self.updates += 1;
        Losses {
            critic: [l1, l2],
            actor,
        }
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Losses {
        match self.config.algorithm {
            Algorithm::Ddpg => self.ddpg_update(batch),
            Algorithm::Td3 => self.td3_update(batch, rng),
        }
    }
}
