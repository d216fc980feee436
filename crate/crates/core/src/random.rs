//! Seedable Gaussian sampling.
//!
//! Every random draw in the crate goes through [`GaussianSampler`]: a ChaCha8
//! stream keyed by a 64-bit seed, with standard normals produced by the
//! ziggurat sampler of `rand_distr`. Both are specified bit-for-bit, so a
//! seed reproduces the same samples on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Sampler for stream `stream` under key `seed`. Distinct streams of the
    /// same seed are independent.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// A fresh, independent sampler derived from this one's seed.
    ///
    /// Splitting does not consume from `self`, so the derived streams depend
    /// only on `(seed, stream)`.
    pub fn split(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.standard_normal()))
    }

    /// Matrix of iid standard normals, filled column by column.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| self.standard_normal()))
    }
}
