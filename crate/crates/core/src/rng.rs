//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha12 generator seeded with the
//! user seed and a fixed stream id, so each quantity (symbols, phase walk,
//! noise, ...) is reproducible on its own. Gaussian variates use the ziggurat
//! sampler of `rand_distr` 0.5 (`StandardNormal`).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const STREAM_SYMBOLS: u64 = 0;
pub const STREAM_PHASE: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_INITIAL_PHASE: u64 = 3;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
