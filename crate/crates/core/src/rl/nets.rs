use rand::Rng;

use crate::autodiff::{AutodiffError, Matrix, ParamId, ParameterSet, Tape, Var};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Affine layer `x W + b` with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialization for weights and biases.
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound));
        let w = draw(input_dim, output_dim);
        let b = draw(1, output_dim);
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), b);
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(params: &mut ParameterSet, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::param_ids).collect()
    }
}

/// One-layer dense encoder: `[x, relu(x W + b)]`, so the latent width is
/// the input width plus the layer width.
#[derive(Debug, Clone, Copy)]
pub struct DenseEncoder {
    pub layer: Linear,
}

impl DenseEncoder {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        obs_dim: usize,
        latent_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(
            latent_dim > obs_dim,
            "latent width {latent_dim} must exceed input width {obs_dim}"
        );
        Self {
            layer: Linear::new(params, name, obs_dim, latent_dim - obs_dim, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.layer.input_dim + self.layer.output_dim
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let h = self.layer.forward(tape, params, x)?;
        let h = tape.relu(h);
        tape.concat_cols(&[x, h])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layer.param_ids().to_vec()
    }
}

/// Twin Q heads over `[features, action]`.
#[derive(Debug, Clone)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl TwinCritic {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        feature_dim: usize,
        action_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let dims = [feature_dim + action_dim, hidden, hidden, 1];
        Self {
            q1: Mlp::new(params, &format!("{name}.q1"), &dims, rng),
            q2: Mlp::new(params, &format!("{name}.q2"), &dims, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        features: Var,
        action: Var,
    ) -> Result<(Var, Var)> {
        let x = tape.concat_cols(&[features, action])?;
        Ok((
            self.q1.forward(tape, params, x)?,
            self.q2.forward(tape, params, x)?,
        ))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.q1.param_ids();
        ids.extend(self.q2.param_ids());
        ids
    }
}

/// Tanh-squashed Gaussian policy head.
#[derive(Debug, Clone)]
pub struct Actor {
    pub mlp: Mlp,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Reparameterized sample: squashed action and its log-density per row.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub action: Var,
    pub log_prob: Var,
    pub mean_action: Var,
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
/// Keeps the change-of-variables term finite when |tanh| rounds to 1.
pub const SQUASH_EPS: f64 = 1e-6;

impl Actor {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        feature_dim: usize,
        action_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            mlp: Mlp::new(
                params,
                name,
                &[feature_dim, hidden, hidden, 2 * action_dim],
                rng,
            ),
            action_dim,
            log_std_min: -10.0,
            log_std_max: 2.0,
        }
    }

    /// Pre-squash mean and clamped log standard deviation.
    pub fn distribution(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        features: Var,
    ) -> Result<(Var, Var)> {
        let out = self.mlp.forward(tape, params, features)?;
        let mean = tape.slice_cols(out, 0, self.action_dim)?;
        let log_std = tape.slice_cols(out, self.action_dim, 2 * self.action_dim)?;
        let log_std = tape.clamp(log_std, self.log_std_min, self.log_std_max);
        Ok((mean, log_std))
    }

    /// `a = tanh(mu + sigma * noise)` with
    /// `log pi(a) = log N(u) - sum log(1 - a^2 + eps)`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        features: Var,
        noise: &Matrix,
    ) -> Result<PolicySample> {
        let (mean, log_std) = self.distribution(tape, params, features)?;
        let noise_var = tape.constant(noise.clone());
        let u = tape.gaussian_reparam(mean, log_std, noise_var)?;
        let action = tape.tanh(u);
        let mean_action = tape.tanh(mean);

        // log N(u; mu, sigma) = -0.5 eps^2 - log sigma - 0.5 log 2pi, per coordinate
        let n = noise.rows();
        let quad = Matrix::from_fn(n, 1, |r, _| {
            noise
                .row(r)
                .iter()
                .map(|e| -0.5 * e * e - 0.5 * LOG_2PI)
                .sum()
        });
        let quad = tape.constant(quad);
        let log_std_sum = tape.sum_rows(log_std);
        let gaussian = tape.sub(quad, log_std_sum)?;

        let a2 = tape.square(action);
        let one_minus = tape.neg(a2);
        let one_minus = tape.add_scalar(one_minus, 1.0 + SQUASH_EPS);
        let log_det = tape.log(one_minus);
        let log_det = tape.sum_rows(log_det);
        let log_prob = tape.sub(gaussian, log_det)?;
        Ok(PolicySample {
            action,
            log_prob,
            mean_action,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}
