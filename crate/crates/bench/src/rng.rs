//! Seeded random streams for the problem generators.
//!
//! Every array is drawn from its own ChaCha8 stream (same 64-bit seed,
//! distinct stream id), so changing one array's size never shifts another's
//! values. Uniforms take the top 53 bits of a `u64`; Gaussians use Box–Muller
//! and consume two uniforms per value.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the generators.
pub mod stream {
    pub const MATRIX: u64 = 1;
    pub const SIGNAL: u64 = 2;
    pub const SUPPORT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const TARGET: u64 = 5;
    pub const PATTERN: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.uniform() * bound as f64) as usize).min(bound - 1)
    }

    /// Standard normal via the cosine branch of Box–Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `count` distinct indices from `0..n` by a partial Fisher–Yates shuffle.
    pub fn choose(&mut self, n: usize, count: usize) -> Vec<usize> {
        let count = count.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    }
}
