//! Seeded randomness.
//!
//! [`SeededRng`] wraps ChaCha8, a counter-based stream cipher generator: the
//! output is a pure function of `(seed, stream, word position)`, so separate
//! consumers (initialization, sampling, augmentation) get their own stream id
//! and can never reorder each other's draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
}

/// Well-known stream ids.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SYNTH: u64 = 4;
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Normal with standard deviation `std`, redrawn until within two
    /// standard deviations of zero.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    pub fn beta(&mut self, alpha: f64) -> Result<f64> {
        let d = Beta::new(alpha, alpha).map_err(|_| invalid("beta", "alpha must be positive"))?;
        Ok(d.sample(&mut self.inner))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
