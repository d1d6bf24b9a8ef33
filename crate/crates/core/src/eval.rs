//! Test protocol, summary metrics and data export.
//!
//! Every trial starts from the configured fixed start at rest; its waypoints
//! are drawn from an RNG seeded with `base_seed + trial`, so a trial's outcome
//! does not depend on which other trials ran or in what order.
//!
//! Per-trial CSV columns, in order:
//!
//! | column        | unit | meaning                                        |
//! |---------------|------|------------------------------------------------|
//! | `trial`       |      | trial index                                    |
//! | `seed`        |      | seed used for the trial                        |
//! | `reward`      |      | cumulative reward                              |
//! | `final_error` | m    | distance to the final active waypoint at end   |
//! | `status`      |      | `success`, `crash`, `out_of_bounds`, `timeout` |
//! | `steps`       |      | environment steps taken                        |
//! | `waypoints`   |      | waypoints reached including the last on success |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Agent;
use crate::dynamics::{ScaledAction, MAX_TILT};
use crate::env::{
    unscale_action, Env, EnvConfig, EnvError, NormalizerStats, Observation, RawAction, ResetMode,
    TerminationStatus, MAX_THRUST,
};
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot summarise an empty set of trials")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Anything that maps the current observation to an action during testing.
/// `env` is available for privileged reference controllers.
pub trait Controller {
    /// Called before each trial with that trial's seed.
    fn reset(&mut self, _seed: u64) {}
    fn act(&mut self, obs: &Observation, env: &Env) -> RawAction;
}

/// Deterministic actor output, no exploration.
impl Controller for &Agent {
    fn act(&mut self, obs: &Observation, _env: &Env) -> RawAction {
        self.policy(obs).clamped()
    }
}

/// Uniform random actions on `[-1, 1]^3`.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Controller for RandomPolicy {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    }

    fn act(&mut self, _obs: &Observation, _env: &Env) -> RawAction {
        RawAction(std::array::from_fn(|_| self.rng.random_range(-1.0..=1.0)))
    }
}

/// PD position controller reading the true state: commands the thrust vector
/// `m (kp e - kd v + g z) + deposition` and inverts the thrust rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalController {
    pub kp: f64,
    pub kd: f64,
    /// Cap on the commanded horizontal acceleration, m/s^2.
    pub max_lateral: f64,
}

impl Default for ProportionalController {
    fn default() -> Self {
        Self {
            kp: 2.0,
            kd: 2.5,
            max_lateral: 4.0,
        }
    }
}

impl Controller for ProportionalController {
    fn act(&mut self, _obs: &Observation, env: &Env) -> RawAction {
        let s = env.state();
        let cfg = env.config();
        let e = env.active_target() - s.position;
        let mut a = e * self.kp - s.velocity * self.kd;
        let lateral = (a.x * a.x + a.y * a.y).sqrt();
        if lateral > self.max_lateral {
            a.x *= self.max_lateral / lateral;
            a.y *= self.max_lateral / lateral;
        }
        a.z += cfg.physics.gravity;
        let mut f = a * s.mass;
        // Validated configs always yield a flow.
        f.z += cfg.deposition.flow().map_or(0.0, |(_, force)| force);
        let thrust = f.norm().min(MAX_THRUST);
        let roll = (-f.y / f.norm()).clamp(-1.0, 1.0).asin();
        let pitch = f.x.atan2(f.z);
        unscale_action(&ScaledAction {
            roll: roll.clamp(-MAX_TILT, MAX_TILT),
            pitch: pitch.clamp(-MAX_TILT, MAX_TILT),
            thrust,
        })
        .clamped()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub step: usize,
    pub time: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub mass: f64,
    pub active_waypoint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 3],
    pub waypoints: Vec<[f64; 3]>,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub reward: f64,
    pub final_error: f64,
    pub status: TerminationStatus,
    pub steps: usize,
    pub waypoints: usize,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl TrialRecord {
    pub fn success(&self) -> bool {
        self.status == TerminationStatus::Success
    }
}

fn sample(env: &Env) -> TrajectorySample {
    let s = env.state();
    TrajectorySample {
        step: env.steps(),
        time: env.steps() as f64 * env.config().physics.dt,
        position: s.position.into(),
        velocity: s.velocity.into(),
        mass: s.mass,
        active_waypoint: env.active_index(),
    }
}

/// Runs one test episode with seed `seed`.
pub fn run_trial<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut Env,
    trial: usize,
    seed: u64,
    record_trajectory: bool,
) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    controller.reset(seed);
    let mut obs = env.reset(ResetMode::Test, &mut rng);
    let start = env.state().position;
    let mut samples = record_trajectory.then(|| vec![sample(env)]);
    let mut reward = 0.0;
    let mut reached = 0;
    let status = loop {
        let action = controller.act(&obs, env);
        let out = env.step(action).expect("trial episode is running");
        reward += out.reward;
        reached += out.waypoint_reached as usize;
        obs = out.observation;
        if let Some(s) = samples.as_mut() {
            s.push(sample(env));
        }
        if out.status.is_terminal() {
            break out.status;
        }
    };
    if status == TerminationStatus::Success {
        reached += 1;
    }
    TrialRecord {
        trial,
        seed,
        reward,
        final_error: (env.active_target() - env.state().position).norm(),
        status,
        steps: env.steps(),
        waypoints: reached,
        trajectory: samples.map(|samples| Trajectory {
            start: start.into(),
            waypoints: env.waypoints().iter().map(|w| (*w).into()).collect(),
            samples,
        }),
    }
}

/// Seed of trial `index` under `base_seed`.
pub fn trial_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Runs trials `indices` against a frozen copy of `normalizer`.
pub fn run_trial_indices<C: Controller + ?Sized>(
    controller: &mut C,
    config: &EnvConfig,
    normalizer: &NormalizerStats,
    indices: impl IntoIterator<Item = usize>,
    base_seed: u64,
    record_trajectory: bool,
) -> Result<Vec<TrialRecord>, EvalError> {
    let mut stats = normalizer.clone();
    stats.freeze();
    let mut env = Env::new(config.clone(), stats)?;
    Ok(indices
        .into_iter()
        .map(|i| {
            run_trial(
                controller,
                &mut env,
                i,
                trial_seed(base_seed, i),
                record_trajectory,
            )
        })
        .collect())
}

/// The test protocol: `n` trials from the fixed start with per-trial random
/// waypoints, no learning and no exploration.
pub fn run_trials<C: Controller + ?Sized>(
    controller: &mut C,
    config: &EnvConfig,
    normalizer: &NormalizerStats,
    n: usize,
    base_seed: u64,
    record_trajectory: bool,
) -> Result<Vec<TrialRecord>, EvalError> {
    run_trial_indices(
        controller,
        config,
        normalizer,
        0..n,
        base_seed,
        record_trajectory,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub trials: usize,
    pub mean_reward: f64,
    pub reward_std: f64,
    /// Mean final positional error over all trials, m.
    pub mean_error: f64,
    /// Standard deviation of the final positional error, m.
    pub precision: f64,
    /// Percentage of trials ending in success.
    pub success_ratio: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Means and population standard deviations, in record order.
pub fn compute_metrics(records: &[TrialRecord]) -> Result<MetricsSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let errors: Vec<f64> = records.iter().map(|r| r.final_error).collect();
    let (mean_reward, reward_std) = mean_std(&rewards);
    let (mean_error, precision) = mean_std(&errors);
    let successes = records.iter().filter(|r| r.success()).count();
    Ok(MetricsSummary {
        trials: records.len(),
        mean_reward,
        reward_std,
        mean_error,
        precision,
        success_ratio: successes as f64 / records.len() as f64 * 100.0,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, EvalError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_records_csv(records: &[TrialRecord], path: &Path) -> Result<(), EvalError> {
    let csv_err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_records_csv(path: &Path) -> Result<Vec<TrialRecord>, EvalError> {
    let csv_err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summary(summary: &MetricsSummary, path: &Path) -> Result<(), EvalError> {
    write_json(summary, path)
}

pub fn read_summary(path: &Path) -> Result<MetricsSummary, EvalError> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub trial: usize,
    pub seed: u64,
    pub status: TerminationStatus,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

/// Writes the trajectories of all records that carry one as a JSON array.
pub fn write_trajectories(records: &[TrialRecord], path: &Path) -> Result<(), EvalError> {
    let files: Vec<TrajectoryFile> = records
        .iter()
        .filter_map(|r| {
            r.trajectory.as_ref().map(|t| TrajectoryFile {
                trial: r.trial,
                seed: r.seed,
                status: r.status,
                trajectory: t.clone(),
            })
        })
        .collect();
    write_json(&files, path)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryFile>, EvalError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{stage_config, Stage, StageSettings};
    use approx::assert_relative_eq;

    fn record(trial: usize, reward: f64, error: f64, status: TerminationStatus) -> TrialRecord {
        TrialRecord {
            trial,
            seed: trial as u64,
            reward,
            final_error: error,
            status,
            steps: 10,
            waypoints: 0,
            trajectory: None,
        }
    }

    #[test]
    fn two_point_metrics() {
        let rs = [
            record(0, 1.0, 0.01, TerminationStatus::Success),
            record(1, 3.0, 0.03, TerminationStatus::Crash),
        ];
        let m = compute_metrics(&rs).unwrap();
        assert_relative_eq!(m.mean_error, 0.02, epsilon = 1e-15);
        assert_relative_eq!(m.precision, 0.01, epsilon = 1e-15);
        assert_eq!(m.mean_reward, 2.0);
        assert_eq!(m.reward_std, 1.0);
        assert_eq!(m.success_ratio, 50.0);
    }

    #[test]
    fn degenerate_metrics() {
        let one = compute_metrics(&[record(0, -4.0, 0.3, TerminationStatus::Success)]).unwrap();
        assert_eq!(one.precision, 0.0);
        assert_eq!(one.reward_std, 0.0);
        assert_eq!(one.success_ratio, 100.0);
        assert!(matches!(compute_metrics(&[]), Err(EvalError::Empty)));
    }

    fn c1() -> EnvConfig {
        let mut c = stage_config(Stage::C1, &EnvConfig::default(), &StageSettings::default());
        c.episode.max_steps = 1000;
        c
    }

    #[test]
    fn controller_solves_c1_and_random_does_not() {
        let stats = NormalizerStats::default();
        let pd = run_trials(
            &mut ProportionalController::default(),
            &c1(),
            &stats,
            50,
            9,
            false,
        )
        .unwrap();
        assert_eq!(compute_metrics(&pd).unwrap().success_ratio, 100.0);
        let rnd = run_trials(&mut RandomPolicy::default(), &c1(), &stats, 50, 9, false).unwrap();
        assert!(compute_metrics(&rnd).unwrap().success_ratio < 5.0);
    }

    #[test]
    fn controller_handles_deposition_and_waypoints() {
        let mut c = stage_config(Stage::C3, &EnvConfig::default(), &StageSettings::default());
        c.episode.measurement_noise_halfwidth = [0.0; 13];
        c.episode.max_steps = 4000;
        let rs = run_trials(
            &mut ProportionalController::default(),
            &c,
            &NormalizerStats::default(),
            10,
            3,
            true,
        )
        .unwrap();
        for r in &rs {
            assert!(r.success(), "{r:?}");
            assert_eq!(r.waypoints, 6);
            let t = r.trajectory.as_ref().unwrap();
            assert_eq!(t.waypoints.len(), 6);
            assert_eq!(t.samples.len(), r.steps + 1);
            assert!(t.samples.windows(2).all(|w| w[1].mass <= w[0].mass));
            assert!(t.samples[1].mass < t.samples[0].mass);
        }
    }

    #[test]
    fn trials_are_deterministic_and_order_free() {
        let stats = NormalizerStats::default();
        let mut pd = RandomPolicy::default();
        let a = run_trials(&mut pd, &c1(), &stats, 6, 100, false).unwrap();
        let b = run_trials(&mut pd, &c1(), &stats, 6, 100, false).unwrap();
        assert_eq!(a, b);
        let mut reversed =
            run_trial_indices(&mut pd, &c1(), &stats, (0..6).rev(), 100, false).unwrap();
        reversed.reverse();
        assert_eq!(a, reversed);
        assert_eq!(a[3].seed, 103);
    }

    #[test]
    fn fixed_start_and_frozen_stats() {
        let stats = NormalizerStats::default();
        let rs = run_trials(&mut RandomPolicy::default(), &c1(), &stats, 3, 0, true).unwrap();
        for r in &rs {
            assert_eq!(r.trajectory.as_ref().unwrap().start, c1().task.fixed_start);
        }
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rs = run_trials(
            &mut ProportionalController::default(),
            &c1(),
            &NormalizerStats::default(),
            5,
            1,
            true,
        )
        .unwrap();
        let summary = compute_metrics(&rs).unwrap();
        let csv_path = dir.path().join("trials.csv");
        write_records_csv(&rs, &csv_path).unwrap();
        let header = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            header.lines().next().unwrap(),
            "trial,seed,reward,final_error,status,steps,waypoints"
        );
        let back = read_records_csv(&csv_path).unwrap();
        let stripped: Vec<TrialRecord> = rs
            .iter()
            .cloned()
            .map(|mut r| {
                r.trajectory = None;
                r
            })
            .collect();
        assert_eq!(back, stripped);
        assert_eq!(compute_metrics(&back).unwrap(), summary);

        let sp = dir.path().join("summary.json");
        write_summary(&summary, &sp).unwrap();
        assert_eq!(read_summary(&sp).unwrap(), summary);

        let tp = dir.path().join("traj.json");
        write_trajectories(&rs, &tp).unwrap();
        let traj = read_trajectories(&tp).unwrap();
        assert_eq!(traj.len(), 5);
        assert_eq!(&traj[2].trajectory, rs[2].trajectory.as_ref().unwrap());
    }

    #[test]
    fn io_errors_carry_path() {
        let err = read_summary(Path::new("/nonexistent/summary.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/summary.json"));
    }
}
