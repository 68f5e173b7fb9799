//! Reproducible random streams.
//!
//! Every stochastic routine takes an explicit `StreamRng`. Replicate streams
//! are derived from a 64-bit master seed and a replicate index through a
//! fixed avalanche mix, so the same `(seed, index)` pair yields the same
//! stream on every platform and build, and distinct indices yield distinct
//! streams.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// The RNG used throughout the crate. ChaCha8 is cheap, has a stable
/// cross-platform implementation, and supports cheap independent seeding.
pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the 64-bit seed for one replicate stream.
///
/// `mix64` is bijective, so for a fixed master seed distinct indices map to
/// distinct derived seeds.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Stream for replicate `index` under `master`.
pub fn stream(master: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = stream(42, 7).random_iter().take(16).collect();
        let b: Vec<u64> = stream(42, 7).random_iter().take(16).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_indices_distinct_streams() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000u64 {
            assert!(seen.insert(derive_seed(42, i)));
        }
        let x: u64 = stream(42, 0).random();
        let y: u64 = stream(42, 1).random();
        assert_ne!(x, y);
    }

    #[test]
    fn derivation_is_frozen() {
        // Guard against accidental changes to the mixing constants: the
        // derivation is part of the reproducibility contract.
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, 0), 0xB1A6_D212_199B_7394);
    }
}
