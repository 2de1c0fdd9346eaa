//! Seed derivation.
//!
//! All randomness descends from one root seed. Named substreams
//! (`"data"`, `"train"`, `"sample"`, `"opt"`, ...) and per-item indices are
//! mixed with SplitMix64 so that serial and parallel consumers see the same
//! per-item generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the substream `label` under `root`.
pub fn substream(root: u64, label: &str) -> u64 {
    splitmix64(splitmix64(root) ^ fnv1a(label))
}

/// Seed of item `index` under `seed`.
pub fn indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ() {
        assert_ne!(substream(7, "data"), substream(7, "train"));
        assert_ne!(substream(7, "data"), substream(8, "data"));
        assert_ne!(indexed(1, 0), indexed(1, 1));
        assert_eq!(indexed(1, 5), indexed(1, 5));
    }
}
