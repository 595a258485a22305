//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(global, stage, index, purpose)`
//! and derived by chaining SplitMix64 finalizers over the four words. The
//! mapping is fixed: changing it changes every logged result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. The numeric values are part of the log format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Bootstrap = 1,
    Mutation = 2,
    Train = 3,
    NetworkInit = 4,
    TrainEpisode = 5,
    EvalEpisode = 6,
    Exploration = 7,
    Sampling = 8,
    Prune = 9,
    CrossValidate = 10,
    Surrogate = 11,
    ObservationMask = 12,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a global seed and three counters.
pub fn derive_seed(global: u64, stage: u64, index: u64, purpose: Purpose) -> u64 {
    [stage, index, purpose as u64]
        .iter()
        .fold(splitmix64(global), |acc, &w| {
            splitmix64(acc ^ splitmix64(w))
        })
}

/// The RNG used everywhere in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
