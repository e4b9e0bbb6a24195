//! Deterministic random numbers.
//!
//! All stochastic pieces of the solver (probe fields, multistart seeds,
//! restart points for the constant estimators) draw from a counter-based
//! ChaCha stream, so a `(seed, stream)` pair fully determines every output
//! on every platform.

use crate::math;
use rand_core::{RngCore, SeedableRng};

/// Seeded random source; cheap to clone, deterministic across platforms.
#[derive(Clone, Debug)]
pub struct Prng(rand_chacha::ChaCha8Rng);

impl Prng {
    /// Root generator for `seed`.
    pub fn new(seed: u64) -> Self {
        Prng(rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent generator for a named substream (sweep row, probe index,
    /// restart number, ...) of the same seed.  Streams never overlap, so
    /// work items can run in any order, or concurrently, without changing
    /// results.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Prng(rng)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant for the small n used here.
        (self.0.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
    }
}
