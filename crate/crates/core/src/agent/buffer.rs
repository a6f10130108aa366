use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Transition;

/// Fixed-capacity ring buffer of transitions with its own sampling RNG.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
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
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.cursor = 0;
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Most recently pushed transition.
    pub fn latest(&self) -> Option<&Transition> {
        if self.items.is_empty() {
            return None;
        }
        let i = (self.cursor + self.capacity - 1) % self.capacity;
        self.items.get(i)
    }

    /// Uniform sample of `min(n, len)` distinct stored transitions.
    pub fn sample(&mut self, n: usize) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        index::sample(&mut self.rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
