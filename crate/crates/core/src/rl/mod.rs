//! SAC-style agent with a dense state encoder and an optional auxiliary
//! head trained jointly with the critic.

mod agent;
mod buffer;
mod losses;
mod nets;

pub use agent::{checkpoint_steps, train_run, Agent, LearningCurve};
pub use buffer::{ReplayBuffer, SegmentBatch, Transition};
pub use losses::{
    actor_loss, aux_loss, critic_loss, critic_target, encode_sequence, sequence_dim,
    temperature_loss, AuxHead, CriticTargetNets, QFunction,
};
pub use nets::{Actor, DenseEncoder, Linear, Mlp, PolicySample, TwinCritic, SQUASH_EPS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dsl::Rejection;
use crate::envs::EnvError;
use crate::operators::OperatorError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("no window of horizon {horizon} fits in a buffer of {len} transitions")]
    InsufficientData { horizon: usize, len: usize },
    #[error("invalid candidate: {0}")]
    InvalidCandidate(#[from] Rejection),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("bad agent configuration: {0}")]
    Config(String),
}

/// Inner-loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub predictor_hidden: usize,
    pub gamma: f64,
    pub tau_encoder: f64,
    pub tau_critic: f64,
    pub critic_target_update_freq: usize,
    pub actor_update_freq: usize,
    pub init_temperature: f64,
    pub lr: f64,
    pub alpha_lr: f64,
    pub alpha_beta1: f64,
    pub aux_weight: f64,
    pub warmup_steps: usize,
    pub eval_episodes: usize,
    pub checkpoints: usize,
    pub replay_capacity: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            hidden_dim: 64,
            latent_dim: 16,
            predictor_hidden: 32,
            gamma: 0.99,
            tau_encoder: 0.05,
            tau_critic: 0.01,
            critic_target_update_freq: 2,
            actor_update_freq: 2,
            init_temperature: 0.1,
            lr: 1e-3,
            alpha_lr: 1e-4,
            alpha_beta1: 0.5,
            aux_weight: 1.0,
            warmup_steps: 1000,
            eval_episodes: 10,
            checkpoints: 5,
            replay_capacity: 100_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.hidden_dim == 0 || self.predictor_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        if self.critic_target_update_freq == 0 || self.actor_update_freq == 0 {
            return bad("update frequencies must be positive");
        }
        if self.eval_episodes == 0 || self.checkpoints == 0 {
            return bad("need at least one checkpoint and one evaluation episode");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be positive");
        }
        if self.init_temperature.is_nan() || self.init_temperature <= 0.0 {
            return bad("init_temperature must be positive");
        }
        for (name, tau) in [
            ("tau_encoder", self.tau_encoder),
            ("tau_critic", self.tau_critic),
        ] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(RlError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}
