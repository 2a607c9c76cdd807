//! Hierarchical seed derivation.
//!
//! A master seed fans out into independent child seeds by stream id, so
//! adding a consumer never shifts the random numbers seen by another.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix(parent ^ mix(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Named streams under one rebuild.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const CLIENTS: u64 = 3;
    pub const BANDIT: u64 = 4;
    pub const BEST: u64 = 5;
    pub const RANDOM_SELECTION: u64 = 6;
}
