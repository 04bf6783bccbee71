//! Deterministic seed derivation for independent random streams.
//!
//! Every source of randomness in this crate is a ChaCha stream keyed by a
//! seed derived from a master seed plus a fixed tuple of indices. Parallel
//! and serial execution therefore agree bit-exactly: each (member, layer)
//! stream is self-contained.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates consecutive inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and stream indices.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix(mix(master ^ mix(a)) ^ mix(b ^ 0x5bf0_3635_d6db_27cd))
}

/// ChaCha RNG keyed by a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
