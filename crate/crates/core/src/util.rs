//! Crate-internal helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to derive independent RNG streams from string keys.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG stream keyed by (seed, name); distinct names give
/// independent streams, so drawing from one never shifts another.
pub(crate) fn seeded_stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()))
}
