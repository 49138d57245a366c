//! Deterministic seed splitting.

/// Derives an independent stream seed from a top-level seed (SplitMix64
/// finalizer over the pair).
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stage tags for [`split_seed`].
pub mod stream {
    pub const RANSAC: u64 = 0x5241_4e53;
    pub const SCENE: u64 = 0x5343_454e;
    pub const ORIENTATION: u64 = 0x4f52_4945;
}
