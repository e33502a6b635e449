//! Proportional prioritized replay.

use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    /// Priority exponent; 0 gives uniform sampling.
    pub alpha: f64,
    /// Added to |TD error| when priorities are refreshed.
    pub p_min: f64,
    /// Sample uniformly and report unit importance weights.
    pub uniform: bool,
    max_priority: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance weights scaled so the largest possible weight is 1.
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, p_min: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            alpha,
            p_min,
            uniform: false,
            max_priority: 1.0,
        }
    }

    pub fn uniform(capacity: usize) -> Self {
        let mut b = ReplayBuffer::new(capacity, 0.0, 1e-3);
        b.uniform = true;
        b
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

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Slot that the next push will overwrite once the ring is full.
    pub fn cursor(&self) -> usize {
        self.next
    }

    /// Stores a transition at the current maximum priority.
    pub fn push(&mut self, t: Transition) {
        self.push_with_priority(t, self.max_priority);
    }

    pub fn push_with_priority(&mut self, t: Transition, priority: f64) {
        assert!(priority > 0.0, "priorities must be positive");
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.priorities.push(priority);
        } else {
            self.items[self.next] = t;
            self.priorities[self.next] = priority;
        }
        self.next = (self.next + 1) % self.capacity;
        self.max_priority = self.max_priority.max(priority);
    }

    /// Restores ring bookkeeping after a reload.
    pub(crate) fn restore_state(&mut self, next: usize, max_priority: f64) {
        self.next = next % self.capacity;
        self.max_priority = max_priority;
    }

    fn scaled(&self, p: f64) -> f64 {
        if self.uniform || self.alpha == 0.0 {
            1.0
        } else {
            p.powf(self.alpha)
        }
    }

    /// Sampling probability of item `i`.
    pub fn probability(&self, i: usize) -> f64 {
        let total: f64 = self.priorities.iter().map(|&p| self.scaled(p)).sum();
        self.scaled(self.priorities[i]) / total
    }

    /// Draws `batch` indices with replacement, `P(i) = p_i^a / sum p^a`.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut impl Rng) -> Result<SampledBatch> {
        let n = self.items.len();
        if n < batch || n == 0 {
            return Err(Error::InsufficientData {
                requested: batch,
                available: n,
            });
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut total = 0.0;
        for &p in &self.priorities {
            total += self.scaled(p);
            cumulative.push(total);
        }
        let mut indices = Vec::with_capacity(batch);
        for _ in 0..batch {
            let u = rng.gen::<f64>() * total;
            let i = cumulative.partition_point(|&c| c <= u).min(n - 1);
            indices.push(i);
        }
        let weights = if self.uniform {
            vec![1.0; batch]
        } else {
            let min_scaled = self
                .priorities
                .iter()
                .map(|&p| self.scaled(p))
                .fold(f64::INFINITY, f64::min);
            let w_max = (n as f64 * min_scaled / total).powf(-beta);
            indices
                .iter()
                .map(|&i| {
                    let prob = self.scaled(self.priorities[i]) / total;
                    (n as f64 * prob).powf(-beta) / w_max
                })
                .collect()
        };
        Ok(SampledBatch { indices, weights })
    }

    /// Sets priorities of sampled items to `|td| + p_min`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &td) in indices.iter().zip(td_errors) {
            let p = td.abs() + self.p_min;
            self.priorities[i] = p;
            self.max_priority = self.max_priority.max(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dummy(reward: i32) -> Transition {
        let obs = Observation::blank(1);
        Transition {
            obs: obs.clone(),
            action: 0,
            reward,
            next_obs: obs,
            terminal: false,
            aux_target: 0.0,
        }
    }

    fn frequencies(buf: &ReplayBuffer, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; buf.len()];
        let batch = buf.len();
        for _ in 0..draws / batch {
            for i in buf.sample(batch, 0.4, &mut rng).unwrap().indices {
                counts[i] += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let mut buf = ReplayBuffer::new(16, 0.0, 1e-3);
        for i in 0..10 {
            buf.push_with_priority(dummy(0), 0.1 + i as f64);
        }
        for f in frequencies(&buf, 100_000, 1) {
            assert!((f - 0.1).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn two_items_three_to_one() {
        let mut buf = ReplayBuffer::new(4, 1.0, 1e-3);
        buf.push_with_priority(dummy(0), 3.0);
        buf.push_with_priority(dummy(0), 1.0);
        let f = frequencies(&buf, 100_000, 2);
        assert!((f[0] - 0.75).abs() < 0.02 && (f[1] - 0.25).abs() < 0.02, "{f:?}");
    }

    #[test]
    fn single_item() {
        let mut buf = ReplayBuffer::new(4, 0.6, 1e-3);
        buf.push(dummy(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = buf.sample(1, 0.4, &mut rng).unwrap();
        assert_eq!(s.indices, vec![0]);
        assert_eq!(s.weights, vec![1.0]);
    }

    #[test]
    fn insufficient_data() {
        let buf = ReplayBuffer::new(4, 0.6, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(2, 0.4, &mut rng),
            Err(Error::InsufficientData { requested: 2, available: 0 })
        ));
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 0.6, 1e-3);
        for r in 0..5 {
            buf.push(dummy(r));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<i32> = (0..3).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![3, 4, 2]);
    }

    #[test]
    fn new_items_get_max_priority() {
        let mut buf = ReplayBuffer::new(8, 0.6, 1e-3);
        buf.push(dummy(0));
        buf.push(dummy(0));
        buf.update_priorities(&[1], &[-4.0]);
        assert!((buf.priority(1) - 4.001).abs() < 1e-12);
        buf.push(dummy(0));
        assert_eq!(buf.priority(2), buf.max_priority());
        buf.update_priorities(&[0], &[0.0]);
        assert!(buf.priorities().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn weights_are_normalized() {
        let mut buf = ReplayBuffer::new(8, 1.0, 1e-3);
        for p in [1.0, 2.0, 4.0] {
            buf.push_with_priority(dummy(0), p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = buf.sample(3, 1.0, &mut rng).unwrap();
        for (&i, &w) in s.indices.iter().zip(&s.weights) {
            // beta = 1: w = p_min_item / p_i
            assert!((w - 1.0 / buf.priority(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_mode_has_unit_weights() {
        let mut buf = ReplayBuffer::uniform(8);
        for p in [1.0, 2.0, 4.0] {
            buf.push_with_priority(dummy(0), p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = buf.sample(3, 0.7, &mut rng).unwrap();
        assert!(s.weights.iter().all(|&w| w == 1.0));
        assert!((buf.probability(2) - 1.0 / 3.0).abs() < 1e-15);
    }
}
