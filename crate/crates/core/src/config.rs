//! Flat run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::OperatorSpec;
use crate::envs::EnvSpec;
use crate::evolution::{EvolutionConfig, MutationMix};
use crate::rl::SacConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

/// Every tunable of a run, one key per field. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    /// Post-warmup environment steps per candidate.
    pub budget: u64,

    pub population: usize,
    pub stages: usize,
    pub survivor_fraction: f64,
    pub mix_replacement: f64,
    pub mix_crossover: f64,
    pub mix_horizon: f64,
    pub mix_random: f64,
    pub prior_fraction: f64,
    pub operator: OperatorSpec,
    pub record_wall_time: bool,

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

impl Default for RunConfig {
    fn default() -> Self {
        let evo = EvolutionConfig::default();
        let sac = SacConfig::default();
        Self {
            env: "pointmass-dense".into(),
            seed: 0,
            workers: 1,
            out: PathBuf::from("runs/default"),
            budget: 20_000,
            population: evo.population,
            stages: evo.stages,
            survivor_fraction: evo.survivor_fraction,
            mix_replacement: evo.mix.replacement,
            mix_crossover: evo.mix.crossover,
            mix_horizon: evo.mix.horizon,
            mix_random: evo.mix.random,
            prior_fraction: evo.prior_fraction,
            operator: evo.operator,
            record_wall_time: evo.record_wall_time,
            batch_size: sac.batch_size,
            hidden_dim: sac.hidden_dim,
            latent_dim: sac.latent_dim,
            predictor_hidden: sac.predictor_hidden,
            gamma: sac.gamma,
            tau_encoder: sac.tau_encoder,
            tau_critic: sac.tau_critic,
            critic_target_update_freq: sac.critic_target_update_freq,
            actor_update_freq: sac.actor_update_freq,
            init_temperature: sac.init_temperature,
            lr: sac.lr,
            alpha_lr: sac.alpha_lr,
            alpha_beta1: sac.alpha_beta1,
            aux_weight: sac.aux_weight,
            warmup_steps: sac.warmup_steps,
            eval_episodes: sac.eval_episodes,
            checkpoints: sac.checkpoints,
            replay_capacity: sac.replay_capacity,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data always serializes")
    }

    pub fn env_spec(&self) -> Result<EnvSpec, ConfigError> {
        self.env
            .parse()
            .map_err(|e: crate::envs::EnvError| ConfigError::Invalid(e.to_string()))
    }

    pub fn sac(&self) -> SacConfig {
        SacConfig {
            batch_size: self.batch_size,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            predictor_hidden: self.predictor_hidden,
            gamma: self.gamma,
            tau_encoder: self.tau_encoder,
            tau_critic: self.tau_critic,
            critic_target_update_freq: self.critic_target_update_freq,
            actor_update_freq: self.actor_update_freq,
            init_temperature: self.init_temperature,
            lr: self.lr,
            alpha_lr: self.alpha_lr,
            alpha_beta1: self.alpha_beta1,
            aux_weight: self.aux_weight,
            warmup_steps: self.warmup_steps,
            eval_episodes: self.eval_episodes,
            checkpoints: self.checkpoints,
            replay_capacity: self.replay_capacity,
        }
    }

    pub fn evolution(&self) -> EvolutionConfig {
        EvolutionConfig {
            population: self.population,
            survivor_fraction: self.survivor_fraction,
            mix: MutationMix {
                replacement: self.mix_replacement,
                crossover: self.mix_crossover,
                horizon: self.mix_horizon,
                random: self.mix_random,
            },
            stages: self.stages,
            prior_fraction: self.prior_fraction,
            operator: self.operator,
            seed: self.seed,
            workers: self.workers,
            record_wall_time: self.record_wall_time,
        }
    }

    /// Checks every derived configuration.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env_spec()?;
        self.sac()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.evolution()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
