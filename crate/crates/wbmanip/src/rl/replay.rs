//! Fixed-capacity transition ring buffer with seeded uniform sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: DVector<f64>,
    pub action: DVector<f64>,
    pub reward: f64,
    pub next_obs: DVector<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

/// Column-per-sample batch view used by the SAC update.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
    pub next_obs: DMatrix<f64>,
    pub dones: DVector<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let n = indices.len();
        let od = self.items[0].obs.len();
        let ad = self.items[0].action.len();
        let mut obs = DMatrix::zeros(od, n);
        let mut actions = DMatrix::zeros(ad, n);
        let mut rewards = DVector::zeros(n);
        let mut next_obs = DMatrix::zeros(od, n);
        let mut dones = DVector::zeros(n);
        for (c, &i) in indices.iter().enumerate() {
            let t = &self.items[i];
            obs.set_column(c, &t.obs);
            actions.set_column(c, &t.action);
            rewards[c] = t.reward;
            next_obs.set_column(c, &t.next_obs);
            dones[c] = if t.done { 1.0 } else { 0.0 };
        }
        Batch {
            obs,
            actions,
            rewards,
            next_obs,
            dones,
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(n, rng);
        self.batch(&idx)
    }
}
