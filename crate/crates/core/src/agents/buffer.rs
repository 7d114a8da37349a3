use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

/// One `(s, a, r, s')` sample. Rewards are stored already scaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Matrix,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Matrix,
    pub done: bool,
    /// Discounted Monte-Carlo return of the behaviour policy from `obs`.
    pub mc_return: Option<f64>,
}

/// Stacked training batch of `b` graphs with `n` nodes each.
#[derive(Clone, Debug)]
pub struct Batch {
    pub b: usize,
    pub n: usize,
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
    pub mc_returns: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        assert!(!items.is_empty(), "empty batch");
        let n = items[0].obs.rows();
        let f = items[0].obs.cols();
        let b = items.len();
        let mut obs = Vec::with_capacity(b * n * f);
        let mut next = Vec::with_capacity(b * n * f);
        let mut actions = Vec::with_capacity(b * n);
        for t in items {
            obs.extend_from_slice(t.obs.data());
            next.extend_from_slice(t.next_obs.data());
            actions.extend_from_slice(&t.action);
        }
        let mc_returns = items.iter().map(|t| t.mc_return).collect::<Option<Vec<f64>>>();
        Self {
            b,
            n,
            obs: Matrix::from_vec(b * n, f, obs),
            actions: Matrix::from_vec(b, n, actions),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_obs: Matrix::from_vec(b * n, f, next),
            dones: items.iter().map(|t| t.done).collect(),
            mc_returns,
        }
    }
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// `k` uniformly drawn transitions (with replacement).
    pub fn sample<'a>(&'a self, k: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..k).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}
