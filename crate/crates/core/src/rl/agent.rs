use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{
    actor_loss, aux_loss, critic_loss, critic_target, temperature_loss, AuxHead, CriticTargetNets,
};
use super::nets::{Actor, DenseEncoder, TwinCritic};
use super::{ReplayBuffer, RlError, SacConfig, SegmentBatch, Transition};
use crate::autodiff::{AdamConfig, Gradients, Matrix, ParamId, ParameterSet, Tape};
use crate::dsl::LossCandidate;
use crate::envs::EnvSpec;
use crate::operators::OperatorParams;
use crate::seed::{derive_seed, rng_from_seed, Purpose};

/// Evaluation returns at increasing post-warmup step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    /// `(env step, mean evaluation return)`; `-inf` after a divergence.
    pub checkpoints: Vec<(u64, f64)>,
    pub seed: u64,
    pub wall_ms: u64,
    /// Training interactions consumed, warmup included.
    pub env_steps: u64,
    pub diverged: bool,
}

/// `round(budget * i / n)` for `i = 1..=n`, deduplicated; `[0]` for a zero
/// budget.
pub fn checkpoint_steps(budget: u64, n: usize) -> Vec<u64> {
    if budget == 0 {
        return vec![0];
    }
    let mut steps: Vec<u64> = (1..=n as u64)
        .map(|i| ((budget * i) as f64 / n as f64).round() as u64)
        .filter(|&s| s > 0)
        .collect();
    steps.dedup();
    steps
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// All networks, optimizer state and bookkeeping of one run.
pub struct Agent {
    pub params: ParameterSet,
    pub encoder: DenseEncoder,
    pub target_encoder: DenseEncoder,
    pub critic: TwinCritic,
    pub critic_target: TwinCritic,
    pub actor: Actor,
    pub log_alpha: ParamId,
    pub aux: Option<AuxHead>,
    pub config: SacConfig,
    pub action_dim: usize,
    encoder_pairs: Vec<(ParamId, ParamId)>,
    critic_pairs: Vec<(ParamId, ParamId)>,
    critic_group: Vec<ParamId>,
    actor_group: Vec<ParamId>,
    updates: u64,
}

impl Agent {
    /// Target networks start as exact copies of their online networks.
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        candidate: Option<&LossCandidate>,
        config: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, RlError> {
        config.validate()?;
        if let Some(c) = candidate {
            c.validate()?;
        }
        let latent = config.latent_dim;
        if latent <= obs_dim {
            return Err(RlError::Config(format!(
                "latent_dim {latent} must exceed the observation width {obs_dim}"
            )));
        }
        let hidden = config.hidden_dim;
        let mut params = ParameterSet::new();

        let mut twin = rng.clone();
        let encoder = DenseEncoder::new(&mut params, "encoder", obs_dim, latent, rng);
        let target_encoder =
            DenseEncoder::new(&mut params, "encoder_target", obs_dim, latent, &mut twin);
        let mut twin = rng.clone();
        let critic = TwinCritic::new(&mut params, "critic", latent, action_dim, hidden, rng);
        let critic_target = TwinCritic::new(
            &mut params,
            "critic_target",
            latent,
            action_dim,
            hidden,
            &mut twin,
        );
        let actor = Actor::new(&mut params, "actor", latent, action_dim, hidden, rng);
        let log_alpha = params.add("log_alpha", Matrix::scalar(config.init_temperature.ln()));
        let aux = candidate.map(|c| {
            AuxHead::new(
                &mut params,
                c.clone(),
                latent,
                action_dim,
                config.predictor_hidden,
                rng,
            )
        });

        let encoder_pairs = target_encoder
            .param_ids()
            .into_iter()
            .zip(encoder.param_ids())
            .collect();
        let critic_pairs = critic_target
            .param_ids()
            .into_iter()
            .zip(critic.param_ids())
            .collect();
        let mut critic_group = encoder.param_ids();
        critic_group.extend(critic.param_ids());
        if let Some(h) = &aux {
            critic_group.extend(h.param_ids());
        }
        let actor_group = actor.param_ids();
        Ok(Self {
            params,
            encoder,
            target_encoder,
            critic,
            critic_target,
            actor,
            log_alpha,
            aux,
            config: config.clone(),
            action_dim,
            encoder_pairs,
            critic_pairs,
            critic_group,
            actor_group,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.params.get(self.log_alpha).item().exp()
    }

    /// Squashed mean action, or a policy sample when `noise` is given.
    pub fn act(&self, obs: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>, RlError> {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(obs));
        let z = self.encoder.forward(&mut tape, &self.params, x)?;
        let a = match noise {
            None => {
                let (mean, _) = self.actor.distribution(&mut tape, &self.params, z)?;
                tape.tanh(mean)
            }
            Some(e) => {
                let s = self
                    .actor
                    .sample(&mut tape, &self.params, z, &Matrix::row_vector(e))?;
                s.action
            }
        };
        Ok(tape.value(a).data().to_vec())
    }

    fn target_nets(&self) -> CriticTargetNets<'_> {
        CriticTargetNets {
            encoder: &self.encoder,
            target_encoder: &self.target_encoder,
            actor: &self.actor,
            critic_target: &self.critic_target,
        }
    }

    /// One gradient step of the joint critic and auxiliary objective, the
    /// periodic actor and temperature steps, and the target updates.
    /// Returns `false` if a loss or gradient went non-finite; parameters
    /// are then left untouched by that step.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<bool, RlError> {
        let cfg = self.config.clone();
        let n = cfg.batch_size;
        let adam = AdamConfig::new(cfg.lr, 0.9, 0.999);
        let batch = buffer.sample_segments(0, n, rng)?;

        let noise = gaussian(n, self.action_dim, rng);
        let y = critic_target(
            &self.params,
            &self.target_nets(),
            &batch,
            &noise,
            cfg.gamma,
            self.alpha(),
        )?;

        let mut tape = Tape::new();
        let mut loss = critic_loss(
            &mut tape,
            &self.params,
            &self.encoder,
            &self.critic,
            &batch,
            &y,
        )?;
        if let Some(head) = &self.aux {
            let k = head.candidate.horizon();
            match buffer.sample_segments(k, n, rng) {
                Ok(seg) => {
                    let aux = aux_loss(
                        &mut tape,
                        &self.params,
                        head,
                        &self.encoder,
                        &self.target_encoder,
                        &seg,
                        OperatorParams::training(),
                        rng,
                    )?;
                    let aux = tape.scale(aux, cfg.aux_weight);
                    loss = tape.add(loss, aux)?;
                }
                // too early in training for a window this long
                Err(RlError::InsufficientData { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if !tape.item(loss).is_finite() {
            return Ok(false);
        }
        let grads = tape.backward(loss, &self.params)?;
        if !grads.is_finite() {
            return Ok(false);
        }
        self.params.adam_step(&grads, &self.critic_group, &adam);

        self.updates += 1;
        if self.updates.is_multiple_of(cfg.actor_update_freq as u64)
            && !self.update_actor(&batch, rng)?
        {
            return Ok(false);
        }
        if self
            .updates
            .is_multiple_of(cfg.critic_target_update_freq as u64)
        {
            self.params.ema_update(&self.critic_pairs, cfg.tau_critic);
        }
        self.params.ema_update(&self.encoder_pairs, cfg.tau_encoder);
        Ok(true)
    }

    fn update_actor(
        &mut self,
        batch: &SegmentBatch,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool, RlError> {
        let cfg = &self.config;
        let n = batch.batch_size();
        let noise = gaussian(n, self.action_dim, rng);
        let alpha = self.alpha();
        let mut tape = Tape::new();
        let s = tape.constant(batch.states[0].clone());
        let z = self.encoder.forward(&mut tape, &self.params, s)?;
        let z = tape.stop_gradient(z);
        let (params, critic) = (&self.params, &self.critic);
        let mut q = |t: &mut Tape, f, a| {
            let (q1, q2) = critic.forward(t, params, f, a)?;
            t.min(q1, q2)
        };
        let (loss, log_prob) =
            actor_loss(&mut tape, params, &self.actor, z, &noise, alpha, &mut q)?;
        if !tape.item(loss).is_finite() {
            return Ok(false);
        }
        let grads = tape.backward(loss, params)?;
        if !grads.is_finite() {
            return Ok(false);
        }
        self.params.adam_step(
            &grads,
            &self.actor_group,
            &AdamConfig::new(cfg.lr, 0.9, 0.999),
        );

        let mut tape = Tape::new();
        let target_entropy = -(self.action_dim as f64);
        let t_loss = temperature_loss(
            &mut tape,
            &self.params,
            self.log_alpha,
            &log_prob,
            target_entropy,
        )?;
        let grads: Gradients = tape.backward(t_loss, &self.params)?;
        if !grads.is_finite() {
            return Ok(false);
        }
        let alpha_adam = AdamConfig::new(cfg.alpha_lr, cfg.alpha_beta1, 0.999);
        self.params
            .adam_step(&grads, &[self.log_alpha], &alpha_adam);
        Ok(self.params.get(self.log_alpha).is_finite())
    }

    /// Mean undiscounted return of the deterministic policy.
    pub fn evaluate(&self, env: &EnvSpec, episodes: usize, seed: u64) -> Result<f64, RlError> {
        let mut env = env.make();
        let mut total = 0.0;
        for ep in 0..episodes as u64 {
            let mut obs = env.reset(derive_seed(seed, 0, ep, Purpose::EvalEpisode));
            loop {
                let a = self.act(&obs, None)?;
                let r = env.step(&a);
                total += r.reward;
                obs = r.observation;
                if r.done {
                    break;
                }
            }
        }
        Ok(total / episodes as f64)
    }
}

/// Trains one agent, with the auxiliary objective of `candidate` if given,
/// for `warmup + budget` environment steps and evaluates it at
/// [`checkpoint_steps`].
///
/// Errors are only raised before training starts. A run whose losses go
/// non-finite stops early and reports `-inf` for every remaining checkpoint.
pub fn train_run(
    candidate: Option<&LossCandidate>,
    env: &EnvSpec,
    budget: u64,
    seed: u64,
    config: &SacConfig,
) -> Result<LearningCurve, RlError> {
    let started = Instant::now();
    let mut train_env = env.make();
    let (obs_dim, act_dim) = (train_env.observation_dim(), train_env.action_dim());
    let mut init_rng = rng_from_seed(derive_seed(seed, 0, 0, Purpose::NetworkInit));
    let mut agent = Agent::new(obs_dim, act_dim, candidate, config, &mut init_rng)?;
    let mut explore = rng_from_seed(derive_seed(seed, 0, 0, Purpose::Exploration));
    let mut sampling = rng_from_seed(derive_seed(seed, 0, 0, Purpose::Sampling));
    let eval_seed = derive_seed(seed, 0, 0, Purpose::EvalEpisode);
    let mut buffer = ReplayBuffer::new(config.replay_capacity);

    let stops = checkpoint_steps(budget, config.checkpoints);
    let mut checkpoints = Vec::with_capacity(stops.len());
    let mut next_stop = 0;
    let warmup = config.warmup_steps as u64;
    let mut episode = 0u64;
    let mut obs = train_env.reset(derive_seed(seed, 0, episode, Purpose::TrainEpisode));
    let mut diverged = false;
    let mut steps_taken = 0u64;

    // the warmup runs even for a zero budget so interaction counts stay comparable
    for step in 0..warmup + budget {
        let action: Vec<f64> = if step < warmup {
            (0..act_dim)
                .map(|_| explore.random_range(-1.0..=1.0))
                .collect()
        } else {
            let e: Vec<f64> = (0..act_dim)
                .map(|_| explore.sample(StandardNormal))
                .collect();
            agent.act(&obs, Some(&e))?
        };
        let r = train_env.step(&action);
        buffer.push(Transition {
            obs: std::mem::take(&mut obs),
            action,
            reward: r.reward,
            next_obs: r.observation.clone(),
            done: r.done,
            terminal: false,
            episode,
        });
        steps_taken += 1;
        obs = if r.done {
            episode += 1;
            train_env.reset(derive_seed(seed, 0, episode, Purpose::TrainEpisode))
        } else {
            r.observation
        };

        if step >= warmup {
            if !agent.update(&buffer, &mut sampling)? {
                diverged = true;
                break;
            }
            let done_updates = step - warmup + 1;
            if stops.get(next_stop) == Some(&done_updates) {
                let score = agent.evaluate(env, config.eval_episodes, eval_seed)?;
                checkpoints.push((done_updates, score));
                next_stop += 1;
            }
        }
    }
    if budget == 0 {
        let score = agent.evaluate(env, config.eval_episodes, eval_seed)?;
        checkpoints.push((0, score));
    }
    for &s in &stops[checkpoints.len()..] {
        checkpoints.push((s, f64::NEG_INFINITY));
    }
    Ok(LearningCurve {
        checkpoints,
        seed,
        wall_ms: started.elapsed().as_millis() as u64,
        env_steps: steps_taken,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoint_steps(0, 5), vec![0]);
        assert_eq!(
            checkpoint_steps(5000, 5),
            vec![1000, 2000, 3000, 4000, 5000]
        );
        assert_eq!(checkpoint_steps(3, 5), vec![1, 2, 3]);
    }
}
