use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Cuts bootstrapping in the TD target.
    pub done: bool,
}

/// Row-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

/// Fixed-capacity ring; once full, each push overwrites the oldest record.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), cursor: 0 })
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

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() || self.items.len() < n {
            return Err(Error::InsufficientData { have: self.items.len(), need: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TransitionBatch> {
        let idx = self.sample_indices(n, rng)?;
        let first = &self.items[idx[0]];
        let (sd, ad) = (first.state.len(), first.action.len());
        let mut b = TransitionBatch {
            states: Array2::zeros((n, sd)),
            actions: Array2::zeros((n, ad)),
            rewards: Vec::with_capacity(n),
            next_states: Array2::zeros((n, sd)),
            dones: Vec::with_capacity(n),
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.items[i];
            for (c, &v) in t.state.iter().enumerate() {
                b.states[[row, c]] = v;
            }
            for (c, &v) in t.action.iter().enumerate() {
                b.actions[[row, c]] = v;
            }
            for (c, &v) in t.next_state.iter().enumerate() {
                b.next_states[[row, c]] = v;
            }
            b.rewards.push(t.reward);
            b.dones.push(t.done);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64) -> Transition {
        Transition { state: vec![x], action: vec![x, -x], reward: x, next_state: vec![x + 1.0], done: false }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        assert!(b.is_empty());
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn sampling_requires_data() {
        let mut b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::InsufficientData { have: 0, need: 2 })));
        b.push(tr(1.0));
        b.push(tr(2.0));
        let batch = b.sample(2, &mut rng).unwrap();
        assert_eq!(batch.actions.ncols(), 2);
        assert!(batch.rewards.iter().all(|&r| r == 1.0 || r == 2.0));
        assert!(ReplayBuffer::new(0).is_err());
    }
}
