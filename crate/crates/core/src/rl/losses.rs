use rand::Rng;

use super::nets::{Actor, DenseEncoder, Mlp, TwinCritic};
use super::{RlError, SegmentBatch};
use crate::autodiff::{AutodiffError, Matrix, ParamId, ParameterSet, Tape, Var};
use crate::dsl::{ElementKind, LossCandidate, Mask, Measure};
use crate::operators::{derangement, operator_loss, LossBatch, OperatorParams};

/// Width of [`encode_sequence`]'s output for a mask.
pub fn sequence_dim(mask: &Mask, latent_dim: usize, action_dim: usize) -> usize {
    mask.elements()
        .iter()
        .map(|e| match e.kind {
            ElementKind::State => latent_dim,
            ElementKind::Action => action_dim,
            ElementKind::Reward => 1,
        })
        .sum()
}

/// Concatenates, in bit order, `g(s)` for selected states and the raw
/// selected actions and rewards. With `detach`, encoded states are wrapped
/// in a stop-gradient.
pub fn encode_sequence(
    tape: &mut Tape,
    params: &ParameterSet,
    encoder: &DenseEncoder,
    mask: &Mask,
    batch: &SegmentBatch,
    detach: bool,
) -> Result<Var, RlError> {
    assert_eq!(
        mask.len(),
        3 * (batch.horizon + 1),
        "mask does not match segment horizon"
    );
    let mut parts = Vec::new();
    for e in mask.elements() {
        let j = e.offset;
        let v = match e.kind {
            ElementKind::State => {
                let s = tape.constant(batch.states[j].clone());
                let z = encoder.forward(tape, params, s)?;
                if detach {
                    tape.stop_gradient(z)
                } else {
                    z
                }
            }
            ElementKind::Action => tape.constant(batch.actions[j].clone()),
            ElementKind::Reward => tape.constant(batch.rewards[j].clone()),
        };
        parts.push(v);
    }
    Ok(tape.concat_cols(&parts)?)
}

/// Learnable parts of one candidate's auxiliary objective.
#[derive(Debug, Clone)]
pub struct AuxHead {
    pub candidate: LossCandidate,
    pub predictor: Mlp,
    /// `d x d` matrix for the bilinear measure, initialized to the identity.
    pub bilinear: Option<ParamId>,
}

impl AuxHead {
    pub fn new(
        params: &mut ParameterSet,
        candidate: LossCandidate,
        latent_dim: usize,
        action_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let src = sequence_dim(candidate.source(), latent_dim, action_dim);
        let tgt = sequence_dim(candidate.target(), latent_dim, action_dim);
        let predictor = Mlp::new(params, "aux.predictor", &[src, hidden, tgt], rng);
        let bilinear = (candidate.operator().measure == Measure::Bilinear)
            .then(|| params.add("aux.bilinear", Matrix::identity(tgt)));
        Self {
            candidate,
            predictor,
            bilinear,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.predictor.param_ids();
        ids.extend(self.bilinear);
        ids
    }
}

/// `f(h(g_online(source)), sg(g_target(target)))` on a segment batch.
/// `rng` picks the derangement used as negatives by the error measures.
#[allow(clippy::too_many_arguments)]
pub fn aux_loss(
    tape: &mut Tape,
    params: &ParameterSet,
    head: &AuxHead,
    encoder: &DenseEncoder,
    target_encoder: &DenseEncoder,
    batch: &SegmentBatch,
    op_params: OperatorParams,
    rng: &mut impl Rng,
) -> Result<Var, RlError> {
    let c = &head.candidate;
    let x = encode_sequence(tape, params, encoder, c.source(), batch, false)?;
    let y = head.predictor.forward(tape, params, x)?;
    let y_hat = encode_sequence(tape, params, target_encoder, c.target(), batch, true)?;
    let mut loss_batch = LossBatch::new(y, y_hat);
    let spec = c.operator();
    if spec.negatives && matches!(spec.measure, Measure::Mse | Measure::Nmse) {
        let perm = derangement(batch.batch_size(), rng);
        let neg = tape.gather_rows(y_hat, &perm)?;
        loss_batch = loss_batch.with_negatives(neg);
    }
    let mut op = op_params;
    if let Some(w) = head.bilinear {
        op = op.with_bilinear(tape.param(params, w));
    }
    Ok(operator_loss(tape, spec, &loss_batch, &op)?)
}

/// Handles needed to evaluate the soft Bellman target.
pub struct CriticTargetNets<'a> {
    pub encoder: &'a DenseEncoder,
    pub target_encoder: &'a DenseEncoder,
    pub actor: &'a Actor,
    pub critic_target: &'a TwinCritic,
}

/// `r + gamma * (1 - terminal) * (min_i Q̂_i(s', a') - alpha log pi(a'|s'))`
/// with `a' ~ pi(.|s')`, returned as a constant `batch x 1` matrix.
pub fn critic_target(
    params: &ParameterSet,
    nets: &CriticTargetNets<'_>,
    batch: &SegmentBatch,
    noise: &Matrix,
    gamma: f64,
    alpha: f64,
) -> Result<Matrix, RlError> {
    let mut tape = Tape::new();
    let next = tape.constant(batch.next_states[0].clone());
    let online = nets.encoder.forward(&mut tape, params, next)?;
    let pi = nets.actor.sample(&mut tape, params, online, noise)?;
    let target_features = nets.target_encoder.forward(&mut tape, params, next)?;
    let (q1, q2) = nets
        .critic_target
        .forward(&mut tape, params, target_features, pi.action)?;
    let q = tape.min(q1, q2)?;
    let (q, log_pi) = (tape.value(q), tape.value(pi.log_prob));
    let r = &batch.rewards[0];
    let live = &batch.not_terminal[0];
    Ok(Matrix::from_fn(q.rows(), 1, |i, _| {
        r.get(i, 0) + gamma * live.get(i, 0) * (q.get(i, 0) - alpha * log_pi.get(i, 0))
    }))
}

/// `mean (Q1 - y)^2 + mean (Q2 - y)^2` with the encoder in the graph.
pub fn critic_loss(
    tape: &mut Tape,
    params: &ParameterSet,
    encoder: &DenseEncoder,
    critic: &TwinCritic,
    batch: &SegmentBatch,
    target: &Matrix,
) -> Result<Var, RlError> {
    let s = tape.constant(batch.states[0].clone());
    let a = tape.constant(batch.actions[0].clone());
    let z = encoder.forward(tape, params, s)?;
    let (q1, q2) = critic.forward(tape, params, z, a)?;
    let y = tape.constant(target.clone());
    let mut total = None;
    for q in [q1, q2] {
        let d = tape.sub(q, y)?;
        let sq = tape.square(d);
        let m = tape.mean(sq);
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    Ok(total.expect("two heads"))
}

/// Scores `(features, action)` rows, returning `batch x 1`.
pub type QFunction<'a> = dyn FnMut(&mut Tape, Var, Var) -> Result<Var, AutodiffError> + 'a;

/// `mean(alpha log pi(a|s) - Q(s, a))` with a reparameterized `a`.
/// Also returns the per-row log-probabilities for the temperature step.
pub fn actor_loss(
    tape: &mut Tape,
    params: &ParameterSet,
    actor: &Actor,
    features: Var,
    noise: &Matrix,
    alpha: f64,
    q: &mut QFunction<'_>,
) -> Result<(Var, Matrix), RlError> {
    let pi = actor.sample(tape, params, features, noise)?;
    let q_val = q(tape, features, pi.action)?;
    let ent = tape.scale(pi.log_prob, alpha);
    let diff = tape.sub(ent, q_val)?;
    let loss = tape.mean(diff);
    Ok((loss, tape.value(pi.log_prob).clone()))
}

/// `mean(-alpha (log pi + target_entropy))`, `alpha = exp(log_alpha)`, with
/// the log-probabilities treated as constants.
pub fn temperature_loss(
    tape: &mut Tape,
    params: &ParameterSet,
    log_alpha: ParamId,
    log_prob: &Matrix,
    target_entropy: f64,
) -> Result<Var, RlError> {
    let la = tape.param(params, log_alpha);
    let alpha = tape.exp(la);
    let shifted = tape.constant(log_prob.map(|lp| -(lp + target_entropy)));
    let mean = tape.mean(shifted);
    Ok(tape.mul(alpha, mean)?)
}
