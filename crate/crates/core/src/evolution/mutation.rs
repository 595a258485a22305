use rand::Rng;

use super::{ceil_count, EvolutionConfig, EvolutionError};
use crate::dsl::{
    sequence_length, LossCandidate, Mask, MaskPair, OperatorSpec, MAX_HORIZON, MIN_HORIZON,
};

/// Tries before a category gives up on producing a valid child and falls
/// back to a fresh random candidate.
const MAX_ATTEMPTS: usize = 10_000;

fn build(source: Vec<bool>, target: Vec<bool>, operator: OperatorSpec) -> LossCandidate {
    let pair = MaskPair::new(
        Mask::from_bits(source).expect("mutations keep whole elements"),
        Mask::from_bits(target).expect("mutations keep whole elements"),
    )
    .expect("mutations keep both masks the same length");
    LossCandidate::new(pair, operator)
}

/// Flips every bit of both masks independently with probability
/// `1 / (2 (3k + 3))`.
pub fn mutate_replacement(c: &LossCandidate, rng: &mut impl Rng) -> LossCandidate {
    let p = 1.0 / (2.0 * c.source().len() as f64);
    let mut flip = |m: &Mask| -> Vec<bool> {
        m.bits()
            .iter()
            .map(|&b| if rng.random_bool(p) { !b } else { b })
            .collect()
    };
    let source = flip(c.source());
    let target = flip(c.target());
    build(source, target, c.operator())
}

/// Takes every bit from `a` or `b` with equal probability. The operator
/// comes from `a`.
pub fn mutate_crossover(
    a: &LossCandidate,
    b: &LossCandidate,
    rng: &mut impl Rng,
) -> Result<LossCandidate, EvolutionError> {
    if a.horizon() != b.horizon() {
        return Err(EvolutionError::HorizonMismatch {
            left: a.horizon(),
            right: b.horizon(),
        });
    }
    let mut mix = |x: &Mask, y: &Mask| -> Vec<bool> {
        x.bits()
            .iter()
            .zip(y.bits())
            .map(|(&p, &q)| if rng.random_bool(0.5) { p } else { q })
            .collect()
    };
    let source = mix(a.source(), b.source());
    let target = mix(a.target(), b.target());
    Ok(build(source, target, a.operator()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonDirection {
    Increase,
    Decrease,
}

/// Drops the last `(s, a, r)` step or appends one with fair random bits.
/// At the horizon bounds the direction is inverted.
pub fn mutate_horizon(
    c: &LossCandidate,
    direction: HorizonDirection,
    rng: &mut impl Rng,
) -> LossCandidate {
    let k = c.horizon();
    let direction = match direction {
        HorizonDirection::Decrease if k <= MIN_HORIZON => HorizonDirection::Increase,
        HorizonDirection::Increase if k >= MAX_HORIZON => HorizonDirection::Decrease,
        d => d,
    };
    let mut resize = |m: &Mask| -> Vec<bool> {
        let mut bits = m.bits().to_vec();
        match direction {
            HorizonDirection::Decrease => bits.truncate(bits.len() - 3),
            HorizonDirection::Increase => bits.extend((0..3).map(|_| rng.random_bool(0.5))),
        }
        bits
    };
    let source = resize(c.source());
    let target = resize(c.target());
    build(source, target, c.operator())
}

/// Biased initial distributions for the bootstrapped population.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    /// Few source states, many source actions, targets are the other states.
    ForwardDynamics,
    /// Mostly rewards in the target, no states or actions there.
    Reward,
}

/// Uniform horizon in `1..=10`; bits are fair coins unless a prior says
/// otherwise. The result is not necessarily valid.
pub fn random_candidate(
    rng: &mut impl Rng,
    prior: Option<Prior>,
    operator: OperatorSpec,
) -> LossCandidate {
    let k = rng.random_range(MIN_HORIZON..=MAX_HORIZON);
    let n = sequence_length(k);
    let mut source = vec![false; n];
    let mut target = vec![false; n];
    for i in 0..n {
        let slot = i % 3;
        match (prior, slot) {
            (Some(Prior::ForwardDynamics), 0) => {
                source[i] = rng.random_bool(0.2);
                target[i] = !source[i];
            }
            (Some(Prior::ForwardDynamics), 1) => {
                source[i] = rng.random_bool(0.8);
                target[i] = rng.random_bool(0.5);
            }
            (Some(Prior::Reward), 0 | 1) => {
                source[i] = rng.random_bool(0.5);
            }
            (Some(Prior::Reward), _) => {
                source[i] = rng.random_bool(0.5);
                target[i] = rng.random_bool(0.8);
            }
            _ => {
                source[i] = rng.random_bool(0.5);
                target[i] = rng.random_bool(0.5);
            }
        }
    }
    build(source, target, operator)
}

fn random_valid(rng: &mut impl Rng, prior: Option<Prior>, operator: OperatorSpec) -> LossCandidate {
    loop {
        let c = random_candidate(rng, prior, operator);
        if c.is_valid() {
            return c;
        }
    }
}

/// Draws children from `make` until one passes the rejection protocol,
/// falling back to a random candidate if that never happens.
fn valid_child<R: Rng>(
    rng: &mut R,
    operator: OperatorSpec,
    mut make: impl FnMut(&mut R) -> LossCandidate,
) -> LossCandidate {
    for _ in 0..MAX_ATTEMPTS {
        let c = make(rng);
        if c.is_valid() {
            return c;
        }
    }
    random_valid(rng, None, operator)
}

/// Per-category child counts: replacement, crossover, horizon, random.
/// Each is `ceil(fraction * P)` clipped to what is left; random takes the
/// remainder.
pub fn category_counts(config: &EvolutionConfig) -> [usize; 4] {
    let p = config.population;
    let mix = &config.mix;
    let mut left = p;
    let mut take = |f: f64| {
        let n = ceil_count(f, p).min(left);
        left -= n;
        n
    };
    let replacement = take(mix.replacement);
    let crossover = take(mix.crossover);
    let horizon = take(mix.horizon);
    [replacement, crossover, horizon, left]
}

/// Builds the next population from the survivors: replacement children
/// cycle through the parents, crossover pairs are drawn among survivors of
/// equal horizon (random candidates if there are none), and horizon
/// children pick a parent and direction at random. Every child is valid.
pub fn next_generation(
    survivors: &[LossCandidate],
    config: &EvolutionConfig,
    rng: &mut impl Rng,
) -> Vec<LossCandidate> {
    assert!(
        !survivors.is_empty(),
        "next_generation needs at least one survivor"
    );
    let op = config.operator;
    let [n_rep, n_cross, n_hor, n_rand] = category_counts(config);
    let mut out = Vec::with_capacity(config.population);

    for i in 0..n_rep {
        let parent = &survivors[i % survivors.len()];
        out.push(valid_child(rng, op, |r| mutate_replacement(parent, r)));
    }

    let pairs: Vec<(usize, usize)> = (0..survivors.len())
        .flat_map(|i| (0..survivors.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && survivors[i].horizon() == survivors[j].horizon())
        .collect();
    for _ in 0..n_cross {
        let child = if pairs.is_empty() {
            random_valid(rng, None, op)
        } else {
            valid_child(rng, op, |r| {
                let (i, j) = pairs[r.random_range(0..pairs.len())];
                mutate_crossover(&survivors[i], &survivors[j], r).expect("pairs share a horizon")
            })
        };
        out.push(child);
    }

    for _ in 0..n_hor {
        out.push(valid_child(rng, op, |r| {
            let parent = &survivors[r.random_range(0..survivors.len())];
            let dir = if r.random_bool(0.5) {
                HorizonDirection::Increase
            } else {
                HorizonDirection::Decrease
            };
            mutate_horizon(parent, dir, r)
        }));
    }

    for _ in 0..n_rand {
        out.push(random_valid(rng, None, op));
    }
    out
}

/// `ceil((1 - prior_fraction) P)` unbiased random candidates followed by
/// the rest split between the forward-dynamics prior (rounded up) and the
/// reward prior.
pub fn bootstrap_population(config: &EvolutionConfig, rng: &mut impl Rng) -> Vec<LossCandidate> {
    let p = config.population;
    let n_plain = ceil_count(1.0 - config.prior_fraction, p).min(p);
    let rest = p - n_plain;
    let n_forward = rest.div_ceil(2);
    let op = config.operator;
    let mut out = Vec::with_capacity(p);
    out.extend((0..n_plain).map(|_| random_valid(rng, None, op)));
    out.extend((0..n_forward).map(|_| random_valid(rng, Some(Prior::ForwardDynamics), op)));
    out.extend((n_plain + n_forward..p).map(|_| random_valid(rng, Some(Prior::Reward), op)));
    out
}
