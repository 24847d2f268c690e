//! Seed derivation.
//!
//! Every random stream in a pipeline run descends from one global seed. A stage
//! seed is `splitmix64(global ^ fnv1a64(stage_name))`, and per-item seeds are
//! `splitmix64(stage_seed ^ splitmix64(index))`. Both functions are fixed here
//! so that a run is reproducible from its manifest alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate.
pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named pipeline stage.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    splitmix64(global ^ fnv1a64(stage.as_bytes()))
}

/// Child seed for the `index`-th item drawn within a stage.
pub fn item_seed(stage_seed: u64, index: u64) -> u64 {
    splitmix64(stage_seed ^ splitmix64(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn stages_get_distinct_seeds() {
        let a = stage_seed(42, "train");
        let b = stage_seed(42, "protocol");
        assert_ne!(a, b);
        assert_eq!(a, stage_seed(42, "train"));
        assert_ne!(item_seed(a, 0), item_seed(a, 1));
    }
}
