use rand::Rng;

use super::RlError;
use crate::autodiff::Matrix;

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// The episode ended on this step, for any reason.
    pub done: bool,
    /// The episode ended in a true terminal state. Time-limit endings are
    /// `done` but not `terminal`, so the critic still bootstraps through them.
    pub terminal: bool,
    pub episode: u64,
}

/// FIFO ring of transitions.
///
/// Transitions are addressed by their logical insertion index; the oldest
/// retained index is `total_pushed - len`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    /// Steps since the start of the owning episode, per slot.
    position: Vec<usize>,
    total: usize,
    last_episode: Option<u64>,
    episode_step: usize,
}

/// `batch` segments of length `k + 1`, stored time-major: `states[j]` holds
/// `s_{t+j}` for every segment as a `batch x obs_dim` matrix.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    pub horizon: usize,
    pub states: Vec<Matrix>,
    pub actions: Vec<Matrix>,
    pub rewards: Vec<Matrix>,
    pub next_states: Vec<Matrix>,
    /// `1 - terminal` per step, `batch x 1`.
    pub not_terminal: Vec<Matrix>,
    pub starts: Vec<usize>,
}

impl SegmentBatch {
    pub fn batch_size(&self) -> usize {
        self.starts.len()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            position: Vec::with_capacity(capacity.min(1 << 16)),
            total: 0,
            last_episode: None,
            episode_step: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn total_pushed(&self) -> usize {
        self.total
    }

    fn oldest(&self) -> usize {
        self.total - self.slots.len()
    }

    /// Transition at logical index `i`, if still retained.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        (i >= self.oldest() && i < self.total).then(|| &self.slots[i % self.capacity])
    }

    pub fn push(&mut self, t: Transition) {
        if self.last_episode == Some(t.episode) {
            self.episode_step += 1;
        } else {
            self.episode_step = 0;
        }
        self.last_episode = Some(t.episode);
        let slot = self.total % self.capacity;
        if self.slots.len() < self.capacity {
            self.slots.push(t);
            self.position.push(self.episode_step);
        } else {
            self.slots[slot] = t;
            self.position[slot] = self.episode_step;
        }
        self.total += 1;
    }

    /// Whether a window `i..=i+k` lies inside the buffer and one episode.
    pub fn is_admissible(&self, i: usize, k: usize) -> bool {
        let end = i + k;
        i >= self.oldest() && end < self.total && self.position[end % self.capacity] >= k
    }

    /// Every admissible window start, ascending.
    pub fn admissible_starts(&self, k: usize) -> Vec<usize> {
        (self.oldest()..self.total)
            .filter(|&i| self.is_admissible(i, k))
            .collect()
    }

    fn sample_start(&self, k: usize, rng: &mut impl Rng) -> Option<usize> {
        let lo = self.oldest();
        if self.total < lo + k + 1 {
            return None;
        }
        let hi = self.total - k;
        for _ in 0..64 {
            let i = rng.random_range(lo..hi);
            if self.is_admissible(i, k) {
                return Some(i);
            }
        }
        // Both branches are uniform over the admissible set, so the mixture is too.
        let starts = self.admissible_starts(k);
        (!starts.is_empty()).then(|| starts[rng.random_range(0..starts.len())])
    }

    /// Uniformly samples `batch` windows of `k + 1` consecutive transitions
    /// from single episodes.
    pub fn sample_segments(
        &self,
        k: usize,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<SegmentBatch, RlError> {
        let mut starts = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = self.sample_start(k, rng).ok_or(RlError::InsufficientData {
                horizon: k,
                len: self.len(),
            })?;
            starts.push(i);
        }
        Ok(self.gather(&starts, k))
    }

    /// Builds a batch from explicit window starts.
    pub fn gather(&self, starts: &[usize], k: usize) -> SegmentBatch {
        let first = &self.slots[starts[0] % self.capacity];
        let (obs_dim, act_dim) = (first.obs.len(), first.action.len());
        let n = starts.len();
        let mut out = SegmentBatch {
            horizon: k,
            states: vec![Matrix::zeros(n, obs_dim); k + 1],
            actions: vec![Matrix::zeros(n, act_dim); k + 1],
            rewards: vec![Matrix::zeros(n, 1); k + 1],
            next_states: vec![Matrix::zeros(n, obs_dim); k + 1],
            not_terminal: vec![Matrix::zeros(n, 1); k + 1],
            starts: starts.to_vec(),
        };
        for (row, &s) in starts.iter().enumerate() {
            for j in 0..=k {
                let t = &self.slots[(s + j) % self.capacity];
                out.states[j].row_mut(row).copy_from_slice(&t.obs);
                out.actions[j].row_mut(row).copy_from_slice(&t.action);
                out.rewards[j].set(row, 0, t.reward);
                out.next_states[j].row_mut(row).copy_from_slice(&t.next_obs);
                out.not_terminal[j].set(row, 0, if t.terminal { 0.0 } else { 1.0 });
            }
        }
        out
    }
}
