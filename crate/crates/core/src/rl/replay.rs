use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cartpole::{Action, CartPoleState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: CartPoleState,
    pub a: Action,
    pub r: f64,
    pub s_next: CartPoleState,
    /// Episode ended at `s_next`; no bootstrap from it.
    pub done: bool,
}

/// Fixed-capacity ring buffer, oldest entries overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Usage(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        Ok((0..k)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f64) -> Transition {
        Transition {
            s: CartPoleState::default(),
            a: Action::Stay,
            r,
            s_next: CartPoleState::default(),
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rs: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().r).collect();
        assert_eq!(rs, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn empty_and_zero_capacity() {
        assert!(ReplayBuffer::new(0).is_err());
        let b = ReplayBuffer::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(1, &mut rng).is_err());
    }
}
