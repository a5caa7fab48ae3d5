//! Seed derivation and RNG construction.
//!
//! Dataset generation is embarrassingly parallel but must stay
//! byte-deterministic, so every record gets its own child seed derived
//! from `(master seed, record index)` with splitmix64. Workers can then
//! draw from independent ChaCha streams in any schedule without
//! affecting the output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 step: mixes `state + GOLDEN_GAMMA` into a well-spread
/// 64-bit value. Used both as a mixer and as a tiny stream generator.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for record `index` under `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Deterministic RNG for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
