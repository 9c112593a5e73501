//! Deterministic seed derivation.
//!
//! Per-trial RNG streams are derived by mixing a master seed with simple
//! domain tags through a splitmix64 chain. The derivation is pure
//! arithmetic, so results do not depend on hasher state, platform, or
//! scheduling, and streams for distinct tag tuples are non-overlapping for
//! all practical purposes.

/// One splitmix64 step: a full-period mixing of a 64-bit state.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a seed from an ordered list of parts (master seed, tags, indices).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x8000_0000_0000_003fu64;
    for &p in parts {
        state = splitmix64(state ^ p);
        state = splitmix64(state);
    }
    state
}

/// Domain tags separating the independent RNG streams of one trial.
pub mod tag {
    pub const MATRIX: u64 = 0x4d41_5452;
    pub const ACTIVITY: u64 = 0x4143_5456;
    pub const BITS: u64 = 0x4249_5453;
    pub const CHANNEL: u64 = 0x4348_414e;
    pub const NOISE: u64 = 0x4e4f_4953;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_seed(&[1, 2, 3]);
        let b = derive_seed(&[1, 2, 3]);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_parts_give_distinct_seeds() {
        let mut seen = std::collections::HashSet::new();
        for master in 0..8u64 {
            for tag in [tag::MATRIX, tag::ACTIVITY, tag::BITS, tag::CHANNEL, tag::NOISE] {
                for trial in 0..64u64 {
                    assert!(seen.insert(derive_seed(&[master, tag, trial])));
                }
            }
        }
    }

    #[test]
    fn order_matters() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
    }
}
