//! Seeded random streams.
//!
//! Every random quantity in the pipeline is drawn from a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng`) keyed by `seed_from_u64(seed)` and selected
//! by a 64-bit stream id. Stream ids are derived from structured keys (row
//! index, iteration, draw index) with the SplitMix64 finalizer, so results
//! never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a sequence of keys into a new seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

/// The stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream addressed by a structured key.
pub fn keyed(seed: u64, keys: &[u64]) -> Rng {
    stream(seed, derive_seed(0, keys))
}
