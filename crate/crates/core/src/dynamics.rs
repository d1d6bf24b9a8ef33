//! Point-mass multirotor model with a first-order attitude loop, material
//! deposition reaction force and optional wind.
//!
//! World frame is z-up. Thrust acts along the body z axis, rotated by roll
//! about x and then pitch about y; yaw never changes.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Roll and pitch are bounded to this magnitude.
pub const MAX_TILT: f64 = FRAC_PI_2;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("{name} must be {requirement}, got {value}")]
    Domain {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, DynamicsError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::Domain {
            name,
            requirement: "> 0",
            value,
        })
    }
}

fn require_non_negative(name: &'static str, value: f64) -> Result<f64, DynamicsError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::Domain {
            name,
            requirement: ">= 0",
            value,
        })
    }
}

/// Extruded mass per second through a circular nozzle: `rho * pi * (d/2)^2 * v`.
pub fn mass_flow_rate(
    density: f64,
    nozzle_diameter: f64,
    exit_velocity: f64,
) -> Result<f64, DynamicsError> {
    let rho = require_positive("density", density)?;
    let d = require_positive("nozzle_diameter", nozzle_diameter)?;
    let v = require_positive("exit_velocity", exit_velocity)?;
    let radius = 0.5 * d;
    Ok(rho * std::f64::consts::PI * radius * radius * v)
}

/// Reaction force magnitude of the extruded jet, `mdot * v_exit`. Acts along -z.
pub fn deposition_force(mdot: f64, exit_velocity: f64) -> Result<f64, DynamicsError> {
    let mdot = require_non_negative("mdot", mdot)?;
    let v = require_non_negative("exit_velocity", exit_velocity)?;
    Ok(mdot * v)
}

pub fn deposition_acceleration(force: f64, mass: f64) -> Result<f64, DynamicsError> {
    let mass = require_positive("mass", mass)?;
    Ok(force / mass)
}

/// First-order lag of an attitude angle towards its command, clamped to
/// `[-pi/2, pi/2]`.
pub fn attitude_track(current: f64, commanded: f64, time_constant: f64, dt: f64) -> f64 {
    debug_assert!(time_constant > 0.0 && dt > 0.0);
    let alpha = dt / time_constant;
    let next = if alpha >= 1.0 {
        commanded
    } else {
        current + (commanded - current) * alpha
    };
    next.clamp(-MAX_TILT, MAX_TILT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Translational acceleration computed on the most recent step.
    pub acceleration: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub mass: f64,
    /// Depletion never takes `mass` below this value.
    pub min_mass: f64,
}

impl DroneState {
    pub fn at_rest(position: Vec3, mass: f64, min_mass_fraction: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            mass,
            min_mass: mass * min_mass_fraction,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Commanded roll/pitch (rad) and collective thrust (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledAction {
    pub roll: f64,
    pub pitch: f64,
    pub thrust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    pub gravity: f64,
    pub dt: f64,
    pub attitude_time_constant: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            dt: 0.01,
            attitude_time_constant: 0.1,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        require_positive("gravity", self.gravity)?;
        require_positive("dt", self.dt)?;
        require_positive("attitude_time_constant", self.attitude_time_constant)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepositionModel {
    /// kg/m^3
    pub density: f64,
    /// m
    pub nozzle_diameter: f64,
    /// m/s
    pub exit_velocity: f64,
    pub active: bool,
}

impl Default for DepositionModel {
    /// Cementitious material through an 8 mm nozzle at 0.5 m/s, inactive.
    fn default() -> Self {
        Self {
            density: 1700.0,
            nozzle_diameter: 0.008,
            exit_velocity: 0.5,
            active: false,
        }
    }
}

impl DepositionModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.active {
            self.flow()?;
        }
        Ok(())
    }

    /// `(mdot, force)` while active, zero otherwise.
    pub fn flow(&self) -> Result<(f64, f64), DynamicsError> {
        if !self.active {
            return Ok((0.0, 0.0));
        }
        let mdot = mass_flow_rate(self.density, self.nozzle_diameter, self.exit_velocity)?;
        Ok((mdot, deposition_force(mdot, self.exit_velocity)?))
    }
}

/// Configuration of the wind disturbance: a constant force plus a uniform
/// per-axis gust in `[-amplitude, amplitude]` drawn each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindParams {
    pub mean_force: [f64; 3],
    pub gust_amplitude: [f64; 3],
}

impl WindParams {
    pub fn is_calm(&self) -> bool {
        self.mean_force == [0.0; 3] && self.gust_amplitude == [0.0; 3]
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for a in self.gust_amplitude {
            require_non_negative("gust_amplitude", a)?;
        }
        Ok(())
    }
}

/// Wind parameters bound to their own seeded gust stream.
#[derive(Debug, Clone)]
pub struct WindModel {
    pub params: WindParams,
    rng: ChaCha8Rng,
}

impl WindModel {
    pub fn new(params: WindParams, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample_force(&mut self) -> Vec3 {
        let mut f = Vec3::from(self.params.mean_force);
        for (i, amp) in self.params.gust_amplitude.iter().enumerate() {
            if *amp > 0.0 {
                f[i] += amp * self.rng.random_range(-1.0..=1.0);
            }
        }
        f
    }
}

/// World-frame thrust for body thrust `t` after roll (about x) then pitch
/// (about y).
pub fn thrust_vector(roll: f64, pitch: f64, thrust: f64) -> Vec3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(thrust * cr * sp, -thrust * sr, thrust * cr * cp)
}

/// Advances the vehicle by one `physics.dt` with semi-implicit Euler.
///
/// Inputs are assumed validated; the integrator itself cannot fail.
pub fn step(
    state: &DroneState,
    command: &ScaledAction,
    physics: &PhysicsParams,
    deposition: &DepositionModel,
    wind: Option<&mut WindModel>,
) -> DroneState {
    let dt = physics.dt;
    let tau = physics.attitude_time_constant;
    let roll = attitude_track(state.roll, command.roll, tau, dt);
    let pitch = attitude_track(state.pitch, command.pitch, tau, dt);
    let m = state.mass;
    let (mdot, f_dep) = deposition.flow().unwrap_or((0.0, 0.0));

    let mut accel = thrust_vector(roll, pitch, command.thrust) / m;
    accel.z -= physics.gravity;
    if f_dep != 0.0 {
        accel.z -= f_dep / m;
    }
    if let Some(w) = wind {
        accel += w.sample_force() / m;
    }

    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;
    let mass = if mdot > 0.0 {
        (m - mdot * dt).max(state.min_mass)
    } else {
        m
    };
    DroneState {
        position,
        velocity,
        acceleration: accel,
        roll,
        pitch,
        yaw: state.yaw,
        mass,
        min_mass: state.min_mass,
    }
}
