//! Deterministic seed derivation.
//!
//! Every random decision in a run is keyed by `(master seed, purpose tag,
//! position indices)` rather than by a single sequential generator. Episodes
//! collected in parallel and runs resumed from a checkpoint therefore see
//! exactly the same draws as a sequential, unbroken run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags namespacing derived seeds.
pub const TAG_STREAM: u64 = 0x01;
pub const TAG_POLICY_INIT: u64 = 0x02;
pub const TAG_FEATURE: u64 = 0x03;
pub const TAG_COLLECT: u64 = 0x04;
pub const TAG_EXPAND: u64 = 0x05;
pub const TAG_EVAL: u64 = 0x06;
pub const TAG_PROBE: u64 = 0x07;
pub const TAG_GENERALIZE: u64 = 0x08;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a tag path into a child seed.
///
/// The position index is folded in so that `[a]` and `[a, 0]` derive
/// different children.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix(master);
    for (i, &t) in tags.iter().enumerate() {
        acc = splitmix(acc ^ t ^ (i as u64 + 1).wrapping_mul(GOLDEN));
    }
    acc
}

/// Child generator for a tag path under a master seed.
pub fn rng_at(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        let a = derive_seed(7, &[TAG_COLLECT, 3, 5]);
        let b = derive_seed(7, &[TAG_COLLECT, 3, 5]);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, &[TAG_COLLECT, 3, 6]));
        assert_ne!(a, derive_seed(8, &[TAG_COLLECT, 3, 5]));
        assert_ne!(derive_seed(7, &[TAG_EVAL]), derive_seed(7, &[TAG_EVAL, 0]));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut r1 = rng_at(42, &[TAG_FEATURE, 1]);
        let mut r2 = rng_at(42, &[TAG_FEATURE, 1]);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
