//! Exploration and target-policy smoothing noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::ACTION_DIM;

/// Ornstein-Uhlenbeck process with zero mean, one value per action dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub value: [f64; ACTION_DIM],
    pub mean_attraction: f64,
    pub std: f64,
}

impl OuNoise {
    pub fn new(mean_attraction: f64, std: f64) -> Self {
        Self {
            value: [0.0; ACTION_DIM],
            mean_attraction,
            std,
        }
    }

    pub fn reset(&mut self) {
        self.value = [0.0; ACTION_DIM];
    }

    /// Euler-Maruyama step driven by explicit standard-normal draws.
    pub fn step_with(&mut self, dt: f64, normals: [f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        let diffusion = self.std * dt.sqrt();
        for (x, z) in self.value.iter_mut().zip(normals) {
            *x += self.mean_attraction * (0.0 - *x) * dt + diffusion * z;
        }
        self.value
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> [f64; ACTION_DIM] {
        let normals = std::array::from_fn(|_| StandardNormal.sample(rng));
        self.step_with(dt, normals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationModel {
    Gaussian,
    OrnsteinUhlenbeck,
}

/// Per-episode exploration process state.
#[derive(Debug, Clone, PartialEq)]
pub enum Exploration {
    Gaussian { std: f64 },
    Ou(OuNoise),
}

impl Exploration {
    pub fn new(model: ExplorationModel, std: f64, mean_attraction: f64) -> Self {
        match model {
            ExplorationModel::Gaussian => Exploration::Gaussian { std },
            ExplorationModel::OrnsteinUhlenbeck => {
                Exploration::Ou(OuNoise::new(mean_attraction, std))
            }
        }
    }

    pub fn reset(&mut self) {
        if let Exploration::Ou(ou) = self {
            ou.reset();
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> [f64; ACTION_DIM] {
        match self {
            Exploration::Gaussian { std } => std::array::from_fn(|_| {
                let z: f64 = StandardNormal.sample(rng);
                *std * z
            }),
            Exploration::Ou(ou) => ou.step(dt, rng),
        }
    }
}

/// Clipped Gaussian perturbation of target-policy actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingPolicy {
    pub std: f64,
    pub std_min: f64,
    pub limit: f64,
}

impl Default for SmoothingPolicy {
    fn default() -> Self {
        Self {
            std: 0.05,
            std_min: 0.05,
            limit: 0.5,
        }
    }
}

impl SmoothingPolicy {
    pub fn effective_std(&self) -> f64 {
        self.std.max(self.std_min)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (z * self.effective_std()).clamp(-self.limit, self.limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ou_drift_only() {
        let mut ou = OuNoise::new(1.0, 0.1);
        ou.value = [0.5, 0.0, -0.5];
        let v = ou.step_with(0.01, [0.0; 3]);
        assert_relative_eq!(v[0], 0.495, epsilon = 1e-15);
        assert_eq!(v[1], 0.0);
        assert_relative_eq!(v[2], -0.495, epsilon = 1e-15);
    }

    #[test]
    fn ou_stationary_std() {
        // Stationary std of dX = -theta X dt + sigma dW is sigma / sqrt(2 theta).
        let mut ou = OuNoise::new(1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..1000 {
            ou.step(0.01, &mut rng);
        }
        for _ in 0..n {
            let x = ou.step(0.01, &mut rng)[0];
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        let expected = 0.1 / 2.0_f64.sqrt();
        assert!(
            (std - expected).abs() / expected < 0.05,
            "{std} vs {expected}"
        );
    }

    #[test]
    fn smoothing_samples_clipped() {
        let wide = SmoothingPolicy {
            std: 2.0,
            std_min: 0.05,
            limit: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let s = wide.sample(&mut rng);
            assert!((-0.5..=0.5).contains(&s));
        }
        let narrow = SmoothingPolicy {
            std: 0.0,
            ..Default::default()
        };
        assert_eq!(narrow.effective_std(), 0.05);
    }
}
