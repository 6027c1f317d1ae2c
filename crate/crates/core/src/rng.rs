//! Seed derivation and the Gaussian stream used for augmentation noise.

use rand::RngCore;
use rand_pcg::Pcg32;

/// Default increment of the reference PCG32 (`pcg32_srandom(seed, 0xda3e39cb94b95bdb)`).
pub const PCG32_STREAM: u64 = 0xda3e_39cb_94b9_5bdb;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to turn string keys (sample ids, slot names) into seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// PCG32 seeded with `splitmix64(seed)` on the reference default stream.
pub fn pcg32(seed: u64) -> Pcg32 {
    Pcg32::new(splitmix64(seed), PCG32_STREAM)
}

/// Seed for one named item under a run seed: `seed XOR fnv1a(key)`.
pub fn keyed_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a64(key.as_bytes())
}

/// Standard normal deviates by the Box–Muller transform over a PCG32 stream.
///
/// Each pair of `u32` draws yields two deviates; the second is cached.
/// `u1 = (a + 1) / 2^32` lies in `(0, 1]` so the logarithm is finite, and
/// `u2 = b / 2^32` lies in `[0, 1)`.
pub struct GaussianStream {
    rng: Pcg32,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(rng: Pcg32) -> Self {
        GaussianStream { rng, spare: None }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / 4_294_967_296.0;
        let u1 = (self.rng.next_u32() as f64 + 1.0) * SCALE;
        let u2 = self.rng.next_u32() as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
