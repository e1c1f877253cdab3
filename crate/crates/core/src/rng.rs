//! Reproducible random streams.
//!
//! Every stream is a SplitMix64 generator whose 64-bit seed is derived by
//! folding integer keys through the SplitMix64 finalizer:
//!
//! ```text
//! seed(k0, k1, ..., kn) = mix(... mix(mix(k0) ^ (k1 + G)) ... ^ (kn + G))
//! mix(z): z += G; z = (z ^ z>>30)·0xBF58476D1CE4E5B9; z = (z ^ z>>27)·0x94D049BB133111EB; z ^ z>>31
//! ```
//!
//! with `G = 0x9E3779B97F4A7C15` and wrapping arithmetic. Uniform doubles take
//! the top 53 bits of each output.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function applied to a single word.
pub fn mix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    let mut it = keys.iter();
    let mut acc = mix64(*it.next().unwrap_or(&0));
    for &k in it {
        acc = mix64(acc ^ k.wrapping_add(GOLDEN));
    }
    acc
}

/// Hashes a role label into a 64-bit key (FNV-1a).
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub struct Stream {
    inner: SplitMix64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn from_keys(keys: &[u64]) -> Self {
        Self::new(derive_seed(keys))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        let span = hi - lo + 1;
        lo + ((self.uniform() * span as f64) as u64).min(span - 1)
    }

    /// Standard Gumbel(0, 1) draw.
    pub fn gumbel(&mut self) -> f64 {
        -(-self.uniform_open().ln()).ln()
    }
}
