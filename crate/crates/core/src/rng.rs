//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream so that
//! changing, say, the batching order never perturbs parameter initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Projection = 2,
    Subsample = 3,
    Batching = 4,
    Generator = 5,
    Negatives = 6,
    Pool = 7,
    Split = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for a sub-component, e.g. one replicate of a sweep.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
