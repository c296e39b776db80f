//! Seeded randomness split by purpose.
//!
//! Each trial owns one seed; independent streams of the same ChaCha generator
//! serve data generation, initialization, sampling and so on, so that adding
//! draws for one purpose never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Sampling = 3,
    Missingness = 4,
    Split = 5,
    Oracle = 6,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Seed for a sub-unit (a trial, a fraction) derived from a parent seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer: cheap, well-mixed, platform independent.
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
