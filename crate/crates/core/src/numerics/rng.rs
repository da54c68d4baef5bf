//! Deterministic random streams.
//!
//! Generator: xoshiro256++ (Blackman & Vigna). A stream `(seed, stream_id)`
//! is initialized by `seed_from_u64(seed + stream_id · 0x9E3779B97F4A7C15)`
//! (wrapping), which expands the 64-bit value through SplitMix64.
//!
//! Uniforms take the top 53 bits: `(next_u64 >> 11) · 2⁻⁵³` in `[0, 1)`.
//! Normals use the Box–Muller transform on `u1 = 1 − uniform`, `u2 = uniform`,
//! returning `r·cos θ` then `r·sin θ` from the same pair.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Named stream ids so that adding probes never shifts data generation.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const PROBES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const BASES: u64 = 5;
    pub const MIRAGE: u64 = 6;
    pub const SHUFFLE: u64 = 7;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let inner =
            Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(stream_id.wrapping_mul(GOLDEN)));
        RngStream {
            seed,
            stream_id,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream; depends only on `(seed, stream_id, child)`,
    /// never on how much of `self` has been consumed.
    pub fn derive(&self, child: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(GOLDEN)));
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2⁻⁴⁰ for the sizes used here
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw `n` standard-normal samples from `rng`.
pub fn gaussian(rng: &mut RngStream, n: usize) -> Vec<f64> {
    rng.gaussian(n)
}
