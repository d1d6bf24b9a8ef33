use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ACTION_DIM, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    /// Set only for true terminations; timeouts keep bootstrapping.
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.state
            .iter()
            .chain(&self.action)
            .chain(&self.next_state)
            .chain(std::iter::once(&self.reward))
            .all(|v| v.is_finite())
    }
}

/// Structure-of-arrays mini-batch, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            len: 0,
            states: Vec::with_capacity(n * OBS_DIM),
            actions: Vec::with_capacity(n * ACTION_DIM),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * OBS_DIM),
            dones: Vec::with_capacity(n),
        }
    }

    pub fn clear(&mut self) {
        self.len = 0;
        self.states.clear();
        self.actions.clear();
        self.rewards.clear();
        self.next_states.clear();
        self.dones.clear();
    }

    pub fn push(&mut self, t: &Transition) {
        self.len += 1;
        self.states.extend_from_slice(&t.state);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_states.extend_from_slice(&t.next_state);
        self.dones.push(t.done);
    }

    pub fn from_transitions<'a>(ts: impl IntoIterator<Item = &'a Transition>) -> Self {
        let mut b = Batch::default();
        for t in ts {
            b.push(t);
        }
        b
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("replay buffer holds {available} transitions, {requested} requested")]
pub struct InsufficientData {
    pub available: usize,
    pub requested: usize,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            cursor: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total transitions ever pushed.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Entry `i` in insertion order, 0 being the oldest retained.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.items.len() {
            return None;
        }
        let start = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        Some(&self.items[(start + i) % self.items.len()])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).expect("in range"))
    }

    /// Indices of `n` uniform draws with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, InsufficientData> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(InsufficientData {
                available: self.items.len(),
                requested: n,
            });
        }
        let len = self.items.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>, InsufficientData> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    /// Samples straight into a reusable batch.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        batch: &mut Batch,
    ) -> Result<(), InsufficientData> {
        let idx = self.sample_indices(n, rng)?;
        batch.clear();
        for i in idx {
            batch.push(&self.items[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tagged(tag: f64) -> Transition {
        Transition {
            state: [tag; OBS_DIM],
            action: [0.0; ACTION_DIM],
            reward: tag,
            next_state: [tag; OBS_DIM],
            done: false,
        }
    }

    #[test]
    fn single_push() {
        let mut b = ReplayBuffer::new(4);
        b.push(tagged(1.0));
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(0), Some(&tagged(1.0)));
    }

    #[test]
    fn fifo_eviction() {
        let cap = 5;
        let mut b = ReplayBuffer::new(cap);
        for i in 0..=cap {
            b.push(tagged(i as f64));
        }
        assert_eq!(b.len(), cap);
        assert!(b.iter().all(|t| t.reward != 0.0));
        let order: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(order, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b.total_pushed(), 6);
    }

    #[test]
    fn sampling_requires_enough_data() {
        let mut b = ReplayBuffer::new(10);
        b.push(tagged(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            b.sample(2, &mut rng).unwrap_err(),
            InsufficientData {
                available: 1,
                requested: 2
            }
        );
        assert_eq!(b.sample(1, &mut rng).unwrap(), vec![tagged(0.0)]);
    }

    #[test]
    fn batch_shape() {
        let mut b = ReplayBuffer::new(1000);
        for i in 0..300 {
            b.push(tagged(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut batch = Batch::default();
        b.sample_into(256, &mut rng, &mut batch).unwrap();
        assert_eq!(batch.len, 256);
        assert_eq!(batch.states.len(), 256 * OBS_DIM);
        assert!(batch.rewards.iter().all(|r| (0.0..300.0).contains(r)));
    }
}
