//! Seed derivation. Every random stream in a run is a fixed function of the
//! root seed, so a run can be replayed from the seed alone.

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of kind `offset` under `root`.
pub fn derive(root: u64, offset: u64, index: u64) -> u64 {
    mix(mix(root ^ offset.wrapping_mul(0xA24B_AED4_963E_E407)).wrapping_add(index))
}

pub mod offset {
    pub const Q_NET: u64 = 1;
    pub const V_NET: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const DATASET: u64 = 4;
    pub const TRAJECTORY: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const ENV: u64 = 9;
    pub const REPLICATE: u64 = 10;
}
