#![allow(dead_code)]

use auxsearch::autodiff::Matrix;
use auxsearch::dsl::{LossCandidate, OperatorSpec};
use auxsearch::evolution::random_candidate;
use auxsearch::rl::{ReplayBuffer, Transition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_valid(rng: &mut ChaCha8Rng, operator: OperatorSpec) -> LossCandidate {
    loop {
        let c = random_candidate(rng, None, operator);
        if c.is_valid() {
            return c;
        }
    }
}

/// Episodes of the given lengths filled with Gaussian observations.
pub fn random_buffer(
    rng: &mut ChaCha8Rng,
    episode_lengths: &[usize],
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
) -> ReplayBuffer {
    let mut buffer = ReplayBuffer::new(capacity);
    for (ep, &len) in episode_lengths.iter().enumerate() {
        let mut obs: Vec<f64> = (0..obs_dim).map(|_| rng.sample(StandardNormal)).collect();
        for step in 0..len {
            let next: Vec<f64> = (0..obs_dim).map(|_| rng.sample(StandardNormal)).collect();
            buffer.push(Transition {
                obs: std::mem::replace(&mut obs, next.clone()),
                action: (0..act_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                reward: rng.sample(StandardNormal),
                next_obs: next,
                done: step + 1 == len,
                terminal: false,
                episode: ep as u64,
            });
        }
    }
    buffer
}
