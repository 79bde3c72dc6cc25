//! Deterministic random streams.
//!
//! Every random draw in an experiment comes from a stream keyed by a tuple
//! such as `(seed, round, index)`, so results do not depend on the order in
//! which tasks happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple into a 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Independent generator for the given key tuple.
pub fn stream(parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Stream purposes, mixed into keys so that e.g. simulation and MCMC
/// streams for the same round never coincide.
pub mod purpose {
    pub const PRIOR: u64 = 1;
    pub const SIMULATE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const MCMC: u64 = 6;
    pub const METRICS: u64 = 7;
    pub const OBSERVATION: u64 = 8;
}
