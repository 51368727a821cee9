//! Stateless value noise: pure functions of (seed, salt, index).
//!
//! Processes that must be identical across runs regardless of how often or in
//! what order they are sampled (bandwidth noise, pacing multipliers) cannot use
//! a sequential RNG stream. splitmix64 over the key gives a deterministic,
//! order-independent draw.

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn hash3(seed: u64, salt: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ salt.wrapping_mul(0xa24b_aed4_963e_e407)) ^ index)
}

/// Uniform draw in [0, 1).
pub fn uniform01(seed: u64, salt: u64, index: u64) -> f64 {
    (hash3(seed, salt, index) >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal draw via Box-Muller.
pub fn std_normal(seed: u64, salt: u64, index: u64) -> f64 {
    let u1 = uniform01(seed, salt, index.wrapping_mul(2)).max(f64::MIN_POSITIVE);
    let u2 = uniform01(seed, salt, index.wrapping_mul(2).wrapping_add(1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
