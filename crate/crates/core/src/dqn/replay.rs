//! Fixed-capacity FIFO experience replay.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("insufficient transitions: have {have}, need {need}")]
pub struct InsufficientTransitions {
    pub have: usize,
    pub need: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity }
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
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>, InsufficientTransitions> {
        if self.items.len() < batch || batch == 0 {
            return Err(InsufficientTransitions { have: self.items.len(), need: batch.max(1) });
        }
        Ok((0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}
