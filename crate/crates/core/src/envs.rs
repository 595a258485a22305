//! Point-mass control tasks and the partial-observability wrapper.
//!
//! A point mass in `[-1, 1]²` is pushed by a bounded acceleration towards a
//! goal. Physics constants are fixed so results stay comparable across runs.
//!
//! Environment ids: `pointmass-dense`, `pointmass-sparse`, each optionally
//! followed by `:pomdp:<fraction>:<seed>`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::seed::{derive_seed, rng_from_seed, Purpose};

pub const EPISODE_LENGTH: usize = 200;
pub const DT: f64 = 0.05;
pub const ACCELERATION: f64 = 0.5;
pub const MAX_SPEED: f64 = 1.0;
pub const ARENA: f64 = 1.0;
pub const SPAWN_RANGE: f64 = 0.9;
pub const SPARSE_RADIUS: f64 = 0.1;
pub const OBSERVATION_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

/// Mean return of the scripted controller on `pointmass-dense`, 20
/// episodes from seed 0. Measured once; treated as the yardstick.
pub const REFERENCE_CONTROLLER_RETURN: f64 = 184.28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardKind {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

impl PointMassState {
    pub fn observation(&self) -> [f64; OBSERVATION_DIM] {
        let (p, v, g) = (self.position, self.velocity, self.goal);
        [p[0], p[1], v[0], v[1], g[0], g[1]]
    }

    pub fn distance_to_goal(&self) -> f64 {
        let dx = self.position[0] - self.goal[0];
        let dy = self.position[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Position and goal uniform in `[-0.9, 0.9]²`, zero velocity.
pub fn point_mass_reset(seed: u64) -> PointMassState {
    let mut rng = rng_from_seed(seed);
    let mut draw = || rng.random_range(-SPAWN_RANGE..=SPAWN_RANGE);
    let position = [draw(), draw()];
    let goal = [draw(), draw()];
    PointMassState {
        position,
        velocity: [0.0, 0.0],
        goal,
        step: 0,
    }
}

/// `1 - |p - g| / (2√2)`, which spans `[0, 1]` inside the arena.
pub fn dense_reward(state: &PointMassState) -> f64 {
    1.0 - state.distance_to_goal() / (2.0 * std::f64::consts::SQRT_2)
}

pub fn sparse_reward(state: &PointMassState) -> f64 {
    if state.distance_to_goal() < SPARSE_RADIUS {
        1.0
    } else {
        0.0
    }
}

/// Advances one step. The action is clamped to `[-1, 1]²`.
pub fn point_mass_step(
    state: &PointMassState,
    action: &[f64],
    reward: RewardKind,
) -> (PointMassState, StepResult) {
    let mut next = *state;
    for i in 0..2 {
        let a = action.get(i).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        next.velocity[i] = (state.velocity[i] + ACCELERATION * a * DT).clamp(-MAX_SPEED, MAX_SPEED);
        next.position[i] = (state.position[i] + next.velocity[i] * DT).clamp(-ARENA, ARENA);
    }
    next.step = state.step + 1;
    let r = match reward {
        RewardKind::Dense => dense_reward(&next),
        RewardKind::Sparse => sparse_reward(&next),
    };
    let result = StepResult {
        observation: next.observation().to_vec(),
        reward: r,
        done: next.step >= EPISODE_LENGTH,
    };
    (next, result)
}

/// Drops a fixed, seed-determined subset of `ceil(fraction * dim)`
/// observation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    kept: Vec<usize>,
    removed: Vec<usize>,
}

impl ObservationMask {
    pub fn new(dim: usize, fraction: f64, seed: u64) -> Result<Self, EnvError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(EnvError::BadFraction(fraction));
        }
        let n_removed = (fraction * dim as f64).ceil() as usize;
        let mut order: Vec<usize> = (0..dim).collect();
        let mut rng = rng_from_seed(derive_seed(seed, 0, 0, Purpose::ObservationMask));
        // partial Fisher-Yates: the first n_removed entries are the drop set
        for i in 0..n_removed {
            let j = rng.random_range(i..dim);
            order.swap(i, j);
        }
        let mut removed = order[..n_removed].to_vec();
        removed.sort_unstable();
        let kept = (0..dim).filter(|i| !removed.contains(i)).collect();
        Ok(Self { kept, removed })
    }

    pub fn removed(&self) -> &[usize] {
        &self.removed
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }

    pub fn apply(&self, observation: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&i| observation[i]).collect()
    }
}

/// One-shot form of [`ObservationMask::apply`].
pub fn pomdp_mask(observation: &[f64], fraction: f64, seed: u64) -> Result<Vec<f64>, EnvError> {
    Ok(ObservationMask::new(observation.len(), fraction, seed)?.apply(observation))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("mask fraction {0} outside [0, 1)")]
    BadFraction(f64),
    #[error("malformed pomdp suffix in `{0}` (expected `:pomdp:<fraction>:<seed>`)")]
    BadPomdpSuffix(String),
}

/// Parsed environment id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub reward: RewardKind,
    pub pomdp: Option<(f64, u64)>,
}

impl EnvSpec {
    pub const DENSE: EnvSpec = EnvSpec {
        reward: RewardKind::Dense,
        pomdp: None,
    };
    pub const SPARSE: EnvSpec = EnvSpec {
        reward: RewardKind::Sparse,
        pomdp: None,
    };

    pub fn make(&self) -> Env {
        let mask = self.pomdp.map(|(fraction, seed)| {
            ObservationMask::new(OBSERVATION_DIM, fraction, seed).expect("validated at parse time")
        });
        Env {
            spec: *self,
            state: point_mass_reset(0),
            mask,
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reward {
            RewardKind::Dense => f.write_str("pointmass-dense")?,
            RewardKind::Sparse => f.write_str("pointmass-sparse")?,
        }
        if let Some((fraction, seed)) = self.pomdp {
            write!(f, ":pomdp:{fraction}:{seed}")?;
        }
        Ok(())
    }
}

impl FromStr for EnvSpec {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, suffix) = match s.split_once(':') {
            Some((b, rest)) => (b, Some(rest)),
            None => (s, None),
        };
        let reward = match base {
            "pointmass-dense" => RewardKind::Dense,
            "pointmass-sparse" => RewardKind::Sparse,
            _ => return Err(EnvError::UnknownEnv(s.to_string())),
        };
        let pomdp = match suffix {
            None => None,
            Some(rest) => {
                let parts: Vec<&str> = rest.split(':').collect();
                let bad = || EnvError::BadPomdpSuffix(s.to_string());
                if parts.len() != 3 || parts[0] != "pomdp" {
                    return Err(bad());
                }
                let fraction: f64 = parts[1].parse().map_err(|_| bad())?;
                let seed: u64 = parts[2].parse().map_err(|_| bad())?;
                if !(0.0..1.0).contains(&fraction) {
                    return Err(EnvError::BadFraction(fraction));
                }
                Some((fraction, seed))
            }
        };
        Ok(EnvSpec { reward, pomdp })
    }
}

/// A stateful environment instance.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    state: PointMassState,
    mask: Option<ObservationMask>,
}

impl Env {
    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn state(&self) -> &PointMassState {
        &self.state
    }

    pub fn observation_dim(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(OBSERVATION_DIM, ObservationMask::output_dim)
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn observe(&self, raw: &[f64]) -> Vec<f64> {
        match &self.mask {
            Some(m) => m.apply(raw),
            None => raw.to_vec(),
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = point_mass_reset(seed);
        self.observe(&self.state.observation())
    }

    pub fn step(&mut self, action: &[f64]) -> StepResult {
        let (next, mut result) = point_mass_step(&self.state, action, self.spec.reward);
        self.state = next;
        result.observation = self.observe(&result.observation);
        result
    }
}

/// Proportional-derivative controller `clamp(2 (g - p) - v)`.
pub fn scripted_action(state: &PointMassState) -> [f64; 2] {
    let mut a = [0.0; 2];
    for (i, ai) in a.iter_mut().enumerate() {
        *ai = (2.0 * (state.goal[i] - state.position[i]) - state.velocity[i]).clamp(-1.0, 1.0);
    }
    a
}

fn mean_return(
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&PointMassState, u64) -> [f64; 2],
) -> f64 {
    assert!(episodes >= 1, "need at least one episode");
    let mut env = spec.make();
    let mut total = 0.0;
    for ep in 0..episodes as u64 {
        env.reset(derive_seed(seed, 0, ep, Purpose::EvalEpisode));
        loop {
            let a = policy(env.state(), ep);
            let r = env.step(&a);
            total += r.reward;
            if r.done {
                break;
            }
        }
    }
    total / episodes as f64
}

/// Mean episodic return of [`scripted_action`].
pub fn scripted_baseline_return(spec: &EnvSpec, episodes: usize, seed: u64) -> f64 {
    mean_return(spec, episodes, seed, |s, _| scripted_action(s))
}

/// Mean episodic return of uniformly random actions.
pub fn random_policy_return(spec: &EnvSpec, episodes: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(derive_seed(seed, 0, 0, Purpose::Exploration));
    mean_return(spec, episodes, seed, move |_, _| {
        [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_in_range() {
        assert_eq!(point_mass_reset(42), point_mass_reset(42));
        assert_ne!(point_mass_reset(42), point_mass_reset(43));
        assert_eq!(point_mass_reset(1).velocity, [0.0, 0.0]);
        for seed in 0..10_000 {
            let s = point_mass_reset(seed);
            for x in s.position.iter().chain(&s.goal) {
                assert!((-0.9..=0.9).contains(x));
            }
        }
    }

    #[test]
    fn statics_and_reward_extremes() {
        let s = point_mass_reset(3);
        let (n, r) = point_mass_step(&s, &[0.0, 0.0], RewardKind::Dense);
        assert_eq!(n.position, s.position);
        assert_eq!(r.reward, dense_reward(&s));

        let at_goal = PointMassState {
            position: [0.3, 0.3],
            velocity: [0.0; 2],
            goal: [0.3, 0.3],
            step: 0,
        };
        assert_eq!(dense_reward(&at_goal), 1.0);
        assert_eq!(sparse_reward(&at_goal), 1.0);
        let far = PointMassState {
            position: [1.0, 1.0],
            velocity: [0.0; 2],
            goal: [-1.0, -1.0],
            step: 0,
        };
        assert!(dense_reward(&far).abs() < 1e-15);
        assert_eq!(sparse_reward(&far), 0.0);
    }

    #[test]
    fn step_clamps_actions_and_bounds() {
        let s = PointMassState {
            position: [0.99, 0.0],
            velocity: [1.0, 0.0],
            goal: [0.0; 2],
            step: 0,
        };
        let (n, _) = point_mass_step(&s, &[50.0, -50.0], RewardKind::Dense);
        assert_eq!(n.velocity[0], 1.0);
        assert_eq!(n.position[0], 1.0);
        assert!((n.velocity[1] + ACCELERATION * DT).abs() < 1e-15);
    }

    #[test]
    fn episode_ends_at_200() {
        let mut env = EnvSpec::DENSE.make();
        env.reset(0);
        for i in 1..=EPISODE_LENGTH {
            let r = env.step(&[0.1, 0.2]);
            assert_eq!(r.done, i == EPISODE_LENGTH);
            assert!((0.0..=1.0).contains(&r.reward));
        }
    }

    #[test]
    fn pomdp_mask_dimensions() {
        let obs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(pomdp_mask(&obs, 0.2, 9).unwrap().len(), 4);
        assert_eq!(pomdp_mask(&obs, 0.0, 9).unwrap(), obs.to_vec());
        let a = ObservationMask::new(6, 0.2, 5).unwrap();
        let b = ObservationMask::new(6, 0.2, 5).unwrap();
        assert_eq!(a.removed(), b.removed());
        // projection: kept values are copied unchanged
        let out = a.apply(&obs);
        for (v, &i) in out.iter().zip(a.kept()) {
            assert_eq!(*v, obs[i]);
        }
        assert!(ObservationMask::new(6, 1.0, 0).is_err());
    }

    #[test]
    fn env_ids_round_trip() {
        for id in [
            "pointmass-dense",
            "pointmass-sparse",
            "pointmass-dense:pomdp:0.2:7",
        ] {
            let spec: EnvSpec = id.parse().unwrap();
            assert_eq!(spec.to_string(), id);
        }
        assert!("cheetah-run".parse::<EnvSpec>().is_err());
        assert!("pointmass-dense:pomdp:0.2".parse::<EnvSpec>().is_err());
        assert!("pointmass-dense:pomdp:1.5:1".parse::<EnvSpec>().is_err());
        let spec: EnvSpec = "pointmass-sparse:pomdp:0.2:7".parse().unwrap();
        assert_eq!(spec.make().observation_dim(), 4);
    }

    #[test]
    fn controller_reference_return() {
        let r = scripted_baseline_return(&EnvSpec::DENSE, 20, 0);
        let rel = (r - REFERENCE_CONTROLLER_RETURN).abs() / REFERENCE_CONTROLLER_RETURN;
        assert!(rel < 0.02, "controller return {r}");
    }

    #[test]
    fn random_policy_is_worse_than_controller() {
        let random = random_policy_return(&EnvSpec::DENSE, 100, 1);
        let ctrl = scripted_baseline_return(&EnvSpec::DENSE, 100, 1);
        assert!(random < ctrl, "random {random} vs controller {ctrl}");
    }

    #[test]
    fn starting_on_goal_pays_one_per_step_until_drift() {
        let s = PointMassState {
            position: [0.2, 0.2],
            velocity: [0.0; 2],
            goal: [0.2, 0.2],
            step: 0,
        };
        let (s1, r1) = point_mass_step(&s, &scripted_action(&s), RewardKind::Dense);
        assert_eq!(r1.reward, 1.0);
        let (_, r2) = point_mass_step(&s1, &scripted_action(&s1), RewardKind::Dense);
        assert_eq!(r2.reward, 1.0);
    }
}
