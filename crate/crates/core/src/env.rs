//! Waypoint-navigation MDP on top of [`crate::dynamics`].
//!
//! Observation layout (13 components):
//!
//! | index | quantity                         | unit  |
//! |-------|----------------------------------|-------|
//! | 0..3  | acceleration a_x, a_y, a_z       | m/s^2 |
//! | 3..6  | target - position (dx, dy, dz)   | m     |
//! | 6..9  | velocity v_x, v_y, v_z           | m/s   |
//! | 9     | roll                             | rad   |
//! | 10    | pitch                            | rad   |
//! | 11    | yaw                              | rad   |
//! | 12    | height z                         | m     |

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, DepositionModel, DroneState, DynamicsError, PhysicsParams, ScaledAction, Vec3, WindModel,
    WindParams,
};

pub const OBS_DIM: usize = 13;
pub const ACTION_DIM: usize = 3;

pub const ACCEL: std::ops::Range<usize> = 0..3;
pub const DELTA: std::ops::Range<usize> = 3..6;
pub const VELOCITY: std::ops::Range<usize> = 6..9;
pub const ROLL: usize = 9;
pub const PITCH: usize = 10;
pub const YAW: usize = 11;
pub const HEIGHT: usize = 12;

/// Upper bound of the thrust command in newtons.
pub const MAX_THRUST: f64 = 10.0;

/// Floor applied to standard deviations used as divisors.
pub const STD_FLOOR: f64 = 1e-6;

/// Characteristic magnitude of each observation component, used to size the
/// default measurement noise.
pub const COMPONENT_SCALE: [f64; OBS_DIM] = [
    5.0, 5.0, 5.0, // m/s^2
    5.0, 5.0, 5.0, // m
    2.0, 2.0, 2.0, // m/s
    FRAC_PI_2, FRAC_PI_2, FRAC_PI_2, // rad
    5.0,       // m
];

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode already terminated with status {0:?}; call reset")]
    Terminated(TerminationStatus),
    #[error("normalizer statistics are frozen")]
    FrozenStats,
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Online per-component mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub mean: [f64; OBS_DIM],
    /// Sum of squared deviations from the running mean.
    pub m2: [f64; OBS_DIM],
    pub count: u64,
    pub frozen: bool,
}

impl Default for NormalizerStats {
    fn default() -> Self {
        Self {
            mean: [0.0; OBS_DIM],
            m2: [0.0; OBS_DIM],
            count: 0,
            frozen: false,
        }
    }
}

impl NormalizerStats {
    /// Sample standard deviation, floored at [`STD_FLOOR`]. With fewer than two
    /// samples the floor is returned.
    pub fn std(&self) -> [f64; OBS_DIM] {
        let mut out = [STD_FLOOR; OBS_DIM];
        if self.count >= 2 {
            let denom = (self.count - 1) as f64;
            for (o, m2) in out.iter_mut().zip(&self.m2) {
                *o = (m2 / denom).sqrt().max(STD_FLOOR);
            }
        }
        out
    }

    pub fn update(&mut self, raw: &Observation) -> Result<(), EnvError> {
        if self.frozen {
            return Err(EnvError::FrozenStats);
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..OBS_DIM {
            let x = raw.0[i];
            let delta = x - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x - self.mean[i]);
        }
        Ok(())
    }

    /// `(obs - mean) / max(std, floor)`. Without any samples the observation is
    /// passed through unchanged.
    pub fn normalize(&self, obs: &Observation) -> Observation {
        if self.count == 0 {
            return *obs;
        }
        let std = self.std();
        let mut out = [0.0; OBS_DIM];
        for i in 0..OBS_DIM {
            out[i] = (obs.0[i] - self.mean[i]) / std[i];
        }
        Observation(out)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Policy output in `[-1, 1]^3`: roll, pitch, thrust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAction(pub [f64; ACTION_DIM]);

impl RawAction {
    pub fn clamped(self) -> Self {
        RawAction(self.0.map(|v| v.clamp(-1.0, 1.0)))
    }
}

pub fn scale_action(raw: RawAction) -> ScaledAction {
    let [r, p, t] = raw.clamped().0;
    ScaledAction {
        roll: r * FRAC_PI_2,
        pitch: p * FRAC_PI_2,
        thrust: (t + 1.0) * 0.5 * MAX_THRUST,
    }
}

/// Inverse of [`scale_action`] on the physical action box.
pub fn unscale_action(a: &ScaledAction) -> RawAction {
    RawAction([
        a.roll / FRAC_PI_2,
        a.pitch / FRAC_PI_2,
        a.thrust / MAX_THRUST * 2.0 - 1.0,
    ])
}

/// Assembles the raw observation and perturbs each component by an
/// independent uniform draw in `[-halfwidth, halfwidth]`. Components with zero
/// halfwidth are left untouched and consume no randomness.
pub fn observe<R: Rng + ?Sized>(
    state: &DroneState,
    target: &Vec3,
    halfwidth: &[f64; OBS_DIM],
    rng: &mut R,
) -> Observation {
    let d = target - state.position;
    let mut o = [
        state.acceleration.x,
        state.acceleration.y,
        state.acceleration.z,
        d.x,
        d.y,
        d.z,
        state.velocity.x,
        state.velocity.y,
        state.velocity.z,
        state.roll,
        state.pitch,
        state.yaw,
        state.position.z,
    ];
    for (v, h) in o.iter_mut().zip(halfwidth) {
        if *h > 0.0 {
            *v += rng.random_range(-*h..=*h);
        }
    }
    Observation(o)
}

/// Proximity reward `w_p * exp(-|p - target|^2)`.
pub fn reward(position: &Vec3, target: &Vec3, weight: f64) -> f64 {
    weight * (-(position - target).norm_squared()).exp()
}

/// Basic-navigation reward: negated Euclidean distance.
pub fn reward_c1(position: &Vec3, target: &Vec3) -> f64 {
    -(target - position).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationStatus {
    Running,
    Success,
    Crash,
    OutOfBounds,
    Timeout,
}

impl TerminationStatus {
    pub fn is_terminal(self) -> bool {
        self != TerminationStatus::Running
    }

    /// True for terminations that cut bootstrapping (everything but timeouts).
    pub fn cuts_bootstrap(self) -> bool {
        matches!(
            self,
            TerminationStatus::Success | TerminationStatus::Crash | TerminationStatus::OutOfBounds
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationStatus::Running => "running",
            TerminationStatus::Success => "success",
            TerminationStatus::Crash => "crash",
            TerminationStatus::OutOfBounds => "out_of_bounds",
            TerminationStatus::Timeout => "timeout",
        }
    }
}

impl std::str::FromStr for TerminationStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "running" => TerminationStatus::Running,
            "success" => TerminationStatus::Success,
            "crash" => TerminationStatus::Crash,
            "out_of_bounds" => TerminationStatus::OutOfBounds,
            "timeout" => TerminationStatus::Timeout,
            other => return Err(format!("unknown termination status {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Distance at which a waypoint counts as reached.
    pub waypoint_advance_radius: f64,
    pub terminal_velocity_threshold: f64,
    pub crash_height: f64,
    pub out_of_bounds_distance: f64,
    pub max_steps: usize,
    pub measurement_noise_halfwidth: [f64; OBS_DIM],
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            waypoint_advance_radius: 0.1,
            terminal_velocity_threshold: 0.1,
            crash_height: 0.1,
            out_of_bounds_distance: 10.0,
            max_steps: 2000,
            measurement_noise_halfwidth: [0.0; OBS_DIM],
        }
    }
}

/// Default measurement noise: 1% of each component's characteristic scale.
pub fn default_noise_halfwidth() -> [f64; OBS_DIM] {
    COMPONENT_SCALE.map(|s| 0.01 * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `-|target - p|`
    NegativeDistance,
    /// `w_p * exp(-|p - target|^2)`
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub weight: f64,
    /// Added when an intermediate waypoint is reached.
    pub waypoint_bonus: f64,
    /// Added on the step that ends the episode with success.
    pub success_bonus: f64,
    /// Subtracted on the step that ends the episode with a crash or by
    /// leaving the allowed region.
    pub failure_penalty: f64,
    /// Coefficient of the penalty on distance from the straight segment
    /// between the previous and the active waypoint.
    pub deviation_penalty: f64,
    /// Multiplies the total step reward.
    pub scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::Exponential,
            weight: 1.0,
            waypoint_bonus: 10.0,
            success_bonus: 0.0,
            failure_penalty: 100.0,
            deviation_penalty: 0.0,
            scale: 1.0,
        }
    }
}

/// How starts, waypoints and vehicle mass are drawn at reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub waypoint_count: usize,
    /// Sample the start uniformly in the workspace during training resets.
    pub randomize_start: bool,
    pub fixed_start: [f64; 3],
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    /// Each waypoint is the previous point plus a uniform per-axis offset of
    /// at most this many metres, clamped to the workspace.
    pub waypoint_range: f64,
    pub nominal_mass: f64,
    /// Initial mass is drawn uniformly in `nominal * (1 +/- mass_jitter)`.
    pub mass_jitter: f64,
    pub min_mass_fraction: f64,
    /// When false the acceleration components are reported as zero.
    pub observe_acceleration: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            waypoint_count: 1,
            randomize_start: false,
            fixed_start: [0.0, 0.0, 2.0],
            workspace_min: [-5.0, -5.0, 0.5],
            workspace_max: [5.0, 5.0, 5.0],
            waypoint_range: 2.0,
            nominal_mass: 0.7,
            mass_jitter: 0.0,
            min_mass_fraction: 0.5,
            observe_acceleration: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub physics: PhysicsParams,
    pub deposition: DepositionModel,
    pub wind: WindParams,
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
    pub task: TaskConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.physics.validate()?;
        self.deposition.validate()?;
        self.wind.validate()?;
        let e = &self.episode;
        let t = &self.task;
        let positive = [
            ("episode.waypoint_advance_radius", e.waypoint_advance_radius),
            (
                "episode.terminal_velocity_threshold",
                e.terminal_velocity_threshold,
            ),
            ("episode.crash_height", e.crash_height),
            ("episode.out_of_bounds_distance", e.out_of_bounds_distance),
            ("reward.weight", self.reward.weight),
            ("reward.scale", self.reward.scale),
            ("task.nominal_mass", t.nominal_mass),
            ("task.waypoint_range", t.waypoint_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if e.max_steps == 0 {
            return Err(EnvError::Config("episode.max_steps must be > 0".into()));
        }
        if t.waypoint_count == 0 {
            return Err(EnvError::Config("task.waypoint_count must be >= 1".into()));
        }
        if e.measurement_noise_halfwidth
            .iter()
            .any(|h| h.is_nan() || *h < 0.0)
        {
            return Err(EnvError::Config(
                "episode.measurement_noise_halfwidth must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.mass_jitter) {
            return Err(EnvError::Config(
                "task.mass_jitter must be in [0, 1)".into(),
            ));
        }
        if !(t.min_mass_fraction > 0.0 && t.min_mass_fraction <= 1.0) {
            return Err(EnvError::Config(
                "task.min_mass_fraction must be in (0, 1]".into(),
            ));
        }
        for i in 0..3 {
            if t.workspace_min[i] > t.workspace_max[i] {
                return Err(EnvError::Config(format!("workspace axis {i} is empty")));
            }
        }
        if t.workspace_min[2] <= e.crash_height {
            return Err(EnvError::Config(
                "workspace floor must lie above the crash height".into(),
            ));
        }
        Ok(())
    }
}

/// Precedence: Crash > OutOfBounds > Success > Timeout > Running.
pub fn check_termination(
    state: &DroneState,
    active_target: &Vec3,
    config: &EpisodeConfig,
    step_count: usize,
    last_waypoint: bool,
) -> TerminationStatus {
    let distance = (active_target - state.position).norm();
    if state.position.z < config.crash_height {
        TerminationStatus::Crash
    } else if distance > config.out_of_bounds_distance {
        TerminationStatus::OutOfBounds
    } else if last_waypoint
        && distance <= config.waypoint_advance_radius
        && state.speed() < config.terminal_velocity_threshold
    {
        TerminationStatus::Success
    } else if step_count >= config.max_steps {
        TerminationStatus::Timeout
    } else {
        TerminationStatus::Running
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// Random start (when the task allows it) and random waypoints.
    Training,
    /// Fixed stationary start with random waypoints.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub status: TerminationStatus,
    pub waypoint_reached: bool,
}

/// A single episode-owning environment instance.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    normalizer: NormalizerStats,
    state: DroneState,
    waypoints: Vec<Vec3>,
    active: usize,
    segment_start: Vec3,
    steps: usize,
    status: TerminationStatus,
    noise_rng: ChaCha8Rng,
    wind: Option<WindModel>,
}

impl Env {
    pub fn new(config: EnvConfig, normalizer: NormalizerStats) -> Result<Self, EnvError> {
        config.validate()?;
        let start = Vec3::from(config.task.fixed_start);
        let state = DroneState::at_rest(
            start,
            config.task.nominal_mass,
            config.task.min_mass_fraction,
        );
        Ok(Self {
            waypoints: vec![start],
            segment_start: start,
            state,
            active: 0,
            steps: 0,
            // Not yet reset: stepping is refused until `reset` runs.
            status: TerminationStatus::Timeout,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
            wind: None,
            config,
            normalizer,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &DroneState {
        &self.state
    }

    pub fn waypoints(&self) -> &[Vec3] {
        &self.waypoints
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn active_target(&self) -> Vec3 {
        self.waypoints[self.active]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn status(&self) -> TerminationStatus {
        self.status
    }

    pub fn normalizer(&self) -> &NormalizerStats {
        &self.normalizer
    }

    pub fn into_normalizer(self) -> NormalizerStats {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, stats: NormalizerStats) {
        self.normalizer = stats;
    }

    /// Swaps the configuration while keeping normalizer statistics.
    pub fn reconfigure(&mut self, config: EnvConfig) -> Result<(), EnvError> {
        config.validate()?;
        self.config = config;
        self.status = TerminationStatus::Timeout;
        Ok(())
    }

    fn sample_point<R: Rng + ?Sized>(&self, around: Option<&Vec3>, rng: &mut R) -> Vec3 {
        let t = &self.config.task;
        let mut p = Vec3::zeros();
        for i in 0..3 {
            let (lo, hi) = (t.workspace_min[i], t.workspace_max[i]);
            p[i] = match around {
                Some(c) => {
                    let r = t.waypoint_range;
                    (c[i] + rng.random_range(-r..=r)).clamp(lo, hi)
                }
                None if lo < hi => rng.random_range(lo..=hi),
                None => lo,
            };
        }
        p
    }

    /// Starts a new episode and returns its first normalized observation.
    pub fn reset<R: Rng + ?Sized>(&mut self, mode: ResetMode, rng: &mut R) -> Observation {
        let t = self.config.task.clone();
        let start = if mode == ResetMode::Training && t.randomize_start {
            self.sample_point(None, rng)
        } else {
            Vec3::from(t.fixed_start)
        };
        let mut waypoints = Vec::with_capacity(t.waypoint_count);
        let mut prev = start;
        for _ in 0..t.waypoint_count {
            let w = self.sample_point(Some(&prev), rng);
            waypoints.push(w);
            prev = w;
        }
        let mass = if t.mass_jitter > 0.0 {
            t.nominal_mass * (1.0 + rng.random_range(-t.mass_jitter..=t.mass_jitter))
        } else {
            t.nominal_mass
        };
        self.noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let wind_seed: u64 = rng.random();
        self.wind = (!self.config.wind.is_calm())
            .then(|| WindModel::new(self.config.wind.clone(), wind_seed));
        self.state = DroneState::at_rest(start, mass, t.min_mass_fraction);
        self.waypoints = waypoints;
        self.active = 0;
        self.segment_start = start;
        self.steps = 0;
        self.status = TerminationStatus::Running;
        self.observe_normalized()
    }

    /// Raw (noisy, unnormalized) observation of the current state.
    pub fn raw_observation(&mut self) -> Observation {
        let target = self.active_target();
        let mut o = observe(
            &self.state,
            &target,
            &self.config.episode.measurement_noise_halfwidth,
            &mut self.noise_rng,
        );
        if !self.config.task.observe_acceleration {
            for i in ACCEL {
                o.0[i] = 0.0;
            }
        }
        o
    }

    fn observe_normalized(&mut self) -> Observation {
        let raw = self.raw_observation();
        if !self.normalizer.frozen {
            self.normalizer
                .update(&raw)
                .expect("unfrozen statistics accept updates");
        }
        self.normalizer.normalize(&raw)
    }

    pub fn step(&mut self, action: RawAction) -> Result<StepOutcome, EnvError> {
        if self.status.is_terminal() {
            return Err(EnvError::Terminated(self.status));
        }
        let command = scale_action(action);
        self.state = dynamics::step(
            &self.state,
            &command,
            &self.config.physics,
            &self.config.deposition,
            self.wind.as_mut(),
        );
        self.steps += 1;

        let rc = &self.config.reward;
        let mut r = 0.0;
        let mut waypoint_reached = false;
        let last_index = self.waypoints.len() - 1;
        if self.active < last_index
            && (self.waypoints[self.active] - self.state.position).norm()
                <= self.config.episode.waypoint_advance_radius
        {
            self.segment_start = self.waypoints[self.active];
            self.active += 1;
            r += rc.waypoint_bonus;
            waypoint_reached = true;
        }
        let target = self.active_target();
        let status = check_termination(
            &self.state,
            &target,
            &self.config.episode,
            self.steps,
            self.active == last_index,
        );
        r += match rc.kind {
            RewardKind::NegativeDistance => reward_c1(&self.state.position, &target),
            RewardKind::Exponential => reward(&self.state.position, &target, rc.weight),
        };
        if rc.deviation_penalty > 0.0 {
            r -= rc.deviation_penalty
                * segment_distance(&self.state.position, &self.segment_start, &target);
        }
        match status {
            TerminationStatus::Success => r += rc.success_bonus,
            TerminationStatus::Crash | TerminationStatus::OutOfBounds => r -= rc.failure_penalty,
            _ => {}
        }
        r *= rc.scale;
        self.status = status;
        let observation = self.observe_normalized();
        Ok(StepOutcome {
            observation,
            reward: r,
            status,
            waypoint_reached,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn scale_action_examples() {
        let a = scale_action(RawAction([0.0, 0.0, 0.0]));
        assert_eq!((a.roll, a.pitch, a.thrust), (0.0, 0.0, 5.0));
        let a = scale_action(RawAction([1.0, 1.0, 1.0]));
        assert_eq!((a.roll, a.pitch, a.thrust), (FRAC_PI_2, FRAC_PI_2, 10.0));
        let a = scale_action(RawAction([-1.0, -1.0, -1.0]));
        assert_eq!((a.roll, a.pitch, a.thrust), (-FRAC_PI_2, -FRAC_PI_2, 0.0));
        let a = scale_action(RawAction([3.0, -7.0, 2.0]));
        assert_eq!((a.roll, a.pitch, a.thrust), (FRAC_PI_2, -FRAC_PI_2, 10.0));
    }

    #[test]
    fn observe_examples() {
        let mut s = DroneState::at_rest(Vec3::new(1.0, 2.0, 3.0), 0.7, 0.5);
        s.acceleration = Vec3::new(0.1, 0.2, 0.3);
        let o = observe(&s, &Vec3::new(1.0, 2.0, 4.0), &[0.0; OBS_DIM], &mut rng(0));
        assert_eq!(&o.0[DELTA], &[0.0, 0.0, 1.0]);
        assert_eq!(o.0[HEIGHT], 3.0);
        assert_eq!(&o.0[ACCEL], &[0.1, 0.2, 0.3]);
        let at = observe(&s, &s.position.clone(), &[0.0; OBS_DIM], &mut rng(0));
        assert_eq!(&at.0[DELTA], &[0.0; 3]);
        assert_eq!(&at.0[VELOCITY], &[0.0; 3]);
    }

    #[test]
    fn observe_noise_bounded_and_truth_untouched() {
        let s = DroneState::at_rest(Vec3::new(1.0, 2.0, 3.0), 0.7, 0.5);
        let clean = observe(&s, &Vec3::zeros(), &[0.0; OBS_DIM], &mut rng(0));
        let hw = default_noise_halfwidth();
        let mut r = rng(1);
        for _ in 0..1000 {
            let noisy = observe(&s, &Vec3::zeros(), &hw, &mut r);
            for ((n, c), h) in noisy.0.iter().zip(&clean.0).zip(&hw) {
                assert!((n - c).abs() <= *h);
            }
        }
        assert_eq!(s.position, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn normalize_examples() {
        let mut stats = NormalizerStats::default();
        for x in [1.0, 3.0, 5.0] {
            let mut o = [x; OBS_DIM];
            o[YAW] = 0.0;
            stats.update(&Observation(o)).unwrap();
        }
        let std = stats.std();
        let mut at_mean = stats.mean;
        assert!(stats
            .normalize(&Observation(at_mean))
            .0
            .iter()
            .all(|v| *v == 0.0));
        for i in 0..OBS_DIM {
            at_mean[i] += std[i];
        }
        let n = stats.normalize(&Observation(at_mean));
        for (i, v) in n.0.iter().enumerate() {
            if i == YAW {
                // (x - x) / floor with the floor itself added
                assert_relative_eq!(*v, 1.0, epsilon = 1e-9);
            } else {
                assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
            }
        }
        assert_eq!(std[YAW], STD_FLOOR);
        let zero = stats.normalize(&Observation(stats.mean));
        assert_eq!(zero.0[YAW], 0.0);
    }

    #[test]
    fn welford_two_samples() {
        let mut stats = NormalizerStats::default();
        stats.update(&Observation([3.0; OBS_DIM])).unwrap();
        assert_eq!(stats.std(), [STD_FLOOR; OBS_DIM]);
        stats.update(&Observation([5.0; OBS_DIM])).unwrap();
        assert_eq!(stats.mean[0], 4.0);
        assert_relative_eq!(stats.std()[0], 2.0_f64.sqrt(), epsilon = 1e-15);
        let mut same = NormalizerStats::default();
        for _ in 0..10 {
            same.update(&Observation([2.5; OBS_DIM])).unwrap();
        }
        assert_eq!(same.std(), [STD_FLOOR; OBS_DIM]);
    }

    #[test]
    fn frozen_stats_refuse_updates() {
        let mut stats = NormalizerStats::default();
        stats.freeze();
        assert_eq!(
            stats.update(&Observation([0.0; OBS_DIM])),
            Err(EnvError::FrozenStats)
        );
    }

    #[test]
    fn reward_examples() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert_eq!(reward(&p, &p, 1.0), 1.0);
        let q = Vec3::new(1.0, 1.0, 2.0);
        assert_relative_eq!(
            reward(&p, &q, 1.0),
            0.367_879_441_171_442_3,
            epsilon = 1e-15
        );
        let far = Vec3::new(1.0, 1.0, 11.0);
        let r = reward(&p, &far, 1.0);
        assert!((0.0..1e-40).contains(&r));
        assert_eq!(reward_c1(&p, &p), 0.0);
        assert_eq!(reward_c1(&Vec3::zeros(), &Vec3::new(3.0, 4.0, 0.0)), -5.0);
    }

    fn state_at(z: f64, speed: f64) -> DroneState {
        let mut s = DroneState::at_rest(Vec3::new(0.0, 0.0, z), 0.7, 0.5);
        s.velocity = Vec3::new(speed, 0.0, 0.0);
        s
    }

    #[test]
    fn termination_examples() {
        let cfg = EpisodeConfig::default();
        let s = state_at(0.05, 0.0);
        assert_eq!(
            check_termination(&s, &Vec3::new(0.0, 0.0, 0.05), &cfg, 1, true),
            TerminationStatus::Crash
        );
        let s = state_at(2.0, 0.0);
        assert_eq!(
            check_termination(&s, &Vec3::new(10.5, 0.0, 2.0), &cfg, 1, true),
            TerminationStatus::OutOfBounds
        );
        let s = state_at(2.0, 0.05);
        assert_eq!(
            check_termination(&s, &Vec3::new(0.0, 0.0, 2.0), &cfg, 1, true),
            TerminationStatus::Success
        );
        // not the final waypoint: no success
        assert_eq!(
            check_termination(&s, &Vec3::new(0.0, 0.0, 2.0), &cfg, 1, false),
            TerminationStatus::Running
        );
        let fast = state_at(2.0, 0.5);
        assert_eq!(
            check_termination(&fast, &Vec3::new(0.0, 0.0, 2.0), &cfg, 1, true),
            TerminationStatus::Running
        );
        assert_eq!(
            check_termination(&fast, &Vec3::new(0.0, 0.0, 2.0), &cfg, cfg.max_steps, true),
            TerminationStatus::Timeout
        );
    }

    #[test]
    fn termination_precedence() {
        let cfg = EpisodeConfig::default();
        // Crash and out of bounds together.
        let s = state_at(0.05, 0.0);
        assert_eq!(
            check_termination(&s, &Vec3::new(20.0, 0.0, 0.0), &cfg, cfg.max_steps, true),
            TerminationStatus::Crash
        );
        // Out of bounds and timeout.
        let s = state_at(2.0, 0.0);
        assert_eq!(
            check_termination(&s, &Vec3::new(20.0, 0.0, 2.0), &cfg, cfg.max_steps, true),
            TerminationStatus::OutOfBounds
        );
        // Success and timeout.
        assert_eq!(
            check_termination(&s, &Vec3::new(0.0, 0.0, 2.0), &cfg, cfg.max_steps, true),
            TerminationStatus::Success
        );
        // Crash on top of an otherwise successful state.
        let mut low = state_at(0.05, 0.0);
        low.position.z = 0.05;
        assert_eq!(
            check_termination(&low, &low.position.clone(), &cfg, 1, true),
            TerminationStatus::Crash
        );
    }

    #[test]
    fn segment_distance_cases() {
        let a = Vec3::zeros();
        let b = Vec3::new(2.0, 0.0, 0.0);
        assert_eq!(segment_distance(&Vec3::new(1.0, 1.0, 0.0), &a, &b), 1.0);
        assert_eq!(segment_distance(&Vec3::new(3.0, 0.0, 0.0), &a, &b), 1.0);
        assert_eq!(segment_distance(&Vec3::new(0.0, 0.0, 2.0), &a, &a), 2.0);
    }

    fn c1_env() -> Env {
        let mut cfg = EnvConfig::default();
        cfg.reward.kind = RewardKind::NegativeDistance;
        Env::new(cfg, NormalizerStats::default()).unwrap()
    }

    #[test]
    fn stepping_before_reset_or_after_end_fails() {
        let mut env = c1_env();
        assert!(matches!(
            env.step(RawAction([0.0; 3])),
            Err(EnvError::Terminated(_))
        ));
        env.reset(ResetMode::Test, &mut rng(1));
        let mut status = TerminationStatus::Running;
        while !status.is_terminal() {
            status = env.step(RawAction([0.0, 0.0, -1.0])).unwrap().status;
        }
        assert_eq!(status, TerminationStatus::Crash);
        assert_eq!(
            env.step(RawAction([0.0; 3])).unwrap_err(),
            EnvError::Terminated(TerminationStatus::Crash)
        );
    }

    #[test]
    fn test_reset_is_deterministic_and_training_start_varies() {
        let mut env = c1_env();
        env.reset(ResetMode::Test, &mut rng(4));
        let w1 = env.waypoints().to_vec();
        env.reset(ResetMode::Test, &mut rng(4));
        assert_eq!(env.waypoints(), &w1[..]);
        assert_eq!(env.state().position, Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(w1.len(), 1);

        let mut cfg = EnvConfig::default();
        cfg.task.randomize_start = true;
        let mut env = Env::new(cfg, NormalizerStats::default()).unwrap();
        let mut r = rng(5);
        env.reset(ResetMode::Training, &mut r);
        let a = env.state().position;
        env.reset(ResetMode::Training, &mut r);
        assert_ne!(a, env.state().position);
    }

    #[test]
    fn hover_at_target_succeeds() {
        let mut env = c1_env();
        env.reset(ResetMode::Test, &mut rng(2));
        // Teleport onto the target and command exact hover thrust.
        let target = env.active_target();
        env.state.position = target;
        let hover = env.state.mass * env.config.physics.gravity;
        let raw = unscale_action(&ScaledAction {
            roll: 0.0,
            pitch: 0.0,
            thrust: hover,
        });
        let out = env.step(raw).unwrap();
        assert_eq!(out.status, TerminationStatus::Success);
        assert!(out.reward <= 0.0 && out.reward > -1e-3);
    }

    #[test]
    fn zero_thrust_crashes() {
        let mut env = c1_env();
        env.reset(ResetMode::Test, &mut rng(3));
        let mut n = 0;
        loop {
            let out = env.step(RawAction([0.0, 0.0, -1.0])).unwrap();
            n += 1;
            if out.status.is_terminal() {
                assert_eq!(out.status, TerminationStatus::Crash);
                break;
            }
        }
        // 1.9 m of free fall takes about 0.62 s.
        assert!(n < 100, "{n}");
    }

    #[test]
    fn exponential_reward_increases_along_straight_approach() {
        let mut cfg = EnvConfig::default();
        cfg.reward.failure_penalty = 0.0;
        let mut env = Env::new(cfg, NormalizerStats::default()).unwrap();
        env.reset(ResetMode::Test, &mut rng(7));
        env.waypoints = vec![Vec3::new(0.0, 0.0, 1.0)];
        env.state.position = Vec3::new(0.0, 0.0, 2.0);
        // Slow scripted descent: slightly under hover thrust.
        let hover = env.state.mass * env.config.physics.gravity;
        let raw = unscale_action(&ScaledAction {
            roll: 0.0,
            pitch: 0.0,
            thrust: hover - 0.05,
        });
        let mut last = f64::NEG_INFINITY;
        for _ in 0..150 {
            let out = env.step(raw).unwrap();
            assert!(out.reward > last);
            last = out.reward;
        }
    }

    #[test]
    fn waypoint_advance_grants_bonus() {
        let mut cfg = EnvConfig::default();
        cfg.task.waypoint_count = 2;
        let mut env = Env::new(cfg, NormalizerStats::default()).unwrap();
        env.reset(ResetMode::Test, &mut rng(8));
        let first = env.waypoints()[0];
        env.state.position = first;
        let hover = env.state.mass * env.config.physics.gravity;
        let raw = unscale_action(&ScaledAction {
            roll: 0.0,
            pitch: 0.0,
            thrust: hover,
        });
        let out = env.step(raw).unwrap();
        assert!(out.waypoint_reached);
        assert_eq!(env.active_index(), 1);
        assert!(out.reward >= 10.0);
        assert_eq!(out.status, TerminationStatus::Running);
    }

    #[test]
    fn masked_acceleration_reads_zero() {
        let mut cfg = EnvConfig::default();
        cfg.task.observe_acceleration = false;
        let mut env = Env::new(cfg, NormalizerStats::default()).unwrap();
        env.reset(ResetMode::Test, &mut rng(1));
        env.step(RawAction([0.2, 0.3, 0.9])).unwrap();
        let raw = env.raw_observation();
        assert_eq!(&raw.0[ACCEL], &[0.0; 3]);
    }

    #[test]
    fn episode_never_exceeds_max_steps() {
        let mut cfg = EnvConfig::default();
        cfg.episode.max_steps = 37;
        let mut env = Env::new(cfg, NormalizerStats::default()).unwrap();
        env.reset(ResetMode::Test, &mut rng(1));
        let hover = env.state.mass * env.config.physics.gravity;
        let raw = unscale_action(&ScaledAction {
            roll: 0.0,
            pitch: 0.0,
            thrust: hover,
        });
        let mut status = TerminationStatus::Running;
        while !status.is_terminal() {
            status = env.step(raw).unwrap().status;
        }
        assert!(env.steps() <= 37);
    }

    proptest! {
        #[test]
        fn scaling_round_trip(r in -1.0f64..=1.0, p in -1.0f64..=1.0, t in -1.0f64..=1.0) {
            let back = unscale_action(&scale_action(RawAction([r, p, t])));
            prop_assert!((back.0[0] - r).abs() < 1e-12);
            prop_assert!((back.0[1] - p).abs() < 1e-12);
            prop_assert!((back.0[2] - t).abs() < 1e-12);
        }

        #[test]
        fn reward_bounds(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0, w in 0.01f64..10.0) {
            let p = Vec3::new(x, y, z);
            let r = reward(&p, &Vec3::zeros(), w);
            prop_assert!(r >= 0.0 && r <= w);
            prop_assert!(reward_c1(&p, &Vec3::zeros()) <= 0.0);
        }

        #[test]
        fn reward_strictly_decreasing_in_distance(steps in proptest::collection::vec(1u32..500, 2..20)) {
            let mut d: Vec<f64> = steps.iter().map(|s| *s as f64 * 0.01).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.dedup();
            let rs: Vec<f64> = d.iter().map(|v| reward(&Vec3::new(*v, 0.0, 0.0), &Vec3::zeros(), 1.0)).collect();
            for w in rs.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }
    }
}
