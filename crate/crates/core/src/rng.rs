//! Seed derivation for every random draw in the crate.
//!
//! All randomness comes from xoshiro256++ generators. A generator is never
//! shared between unrelated consumers; instead each consumer derives its own
//! stream from `(master seed, stream id, counter)`:
//!
//! ```text
//! state_seed = splitmix64(splitmix64(master ^ splitmix64(stream)) ^ counter)
//! rng        = Xoshiro256PlusPlus::seed_from_u64(state_seed)
//! ```
//!
//! `seed_from_u64` expands the 64-bit seed with SplitMix64, so the whole chain
//! is reproducible from the published algorithms alone. Uniform draws use the
//! top 53 bits of a `u64`; integer draws scale that uniform, which keeps the
//! mapping identical in any language with IEEE doubles.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub mod streams {
    pub const WORLD: u64 = 1;
    pub const EXAMPLE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SUBSET: u64 = 5;
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct StreamRng {
    inner: Xoshiro256PlusPlus,
}

impl StreamRng {
    pub fn derive(master: u64, stream: u64, counter: u64) -> Self {
        let s = splitmix64(splitmix64(master ^ splitmix64(stream)) ^ counter);
        StreamRng {
            inner: Xoshiro256PlusPlus::seed_from_u64(s),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Draw an index with probability proportional to `weights`.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if target < w {
                return i;
            }
            target -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
