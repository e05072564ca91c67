//! Deterministic derivation of independent RNG seeds.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `seed`; stream 0 is `seed` itself.
pub fn derive(seed: u64, stream: u64) -> u64 {
    if stream == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(stream))
    }
}

/// Named sub-streams used across the crate.
pub mod stream {
    pub const INIT_EXTRACTOR: u64 = 0x10;
    pub const INIT_ESTIMATOR: u64 = 0x11;
    pub const INIT_DISCRIMINATOR: u64 = 0x12;
    pub const INIT_RECONSTRUCTOR: u64 = 0x13;
    pub const SOURCE_SHUFFLE: u64 = 0x20;
    pub const TARGET_SAMPLING: u64 = 0x21;
    pub const SOBOL: u64 = 0x30;
    pub const TARGET_SCANS: u64 = 0x40;
}
