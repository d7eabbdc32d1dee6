//! Deterministic random number generation.
//!
//! All randomness in the crate flows through [`Rng64`], a ChaCha12 stream
//! seeded from a `u64`. Gaussian variates use the Marsaglia polar method
//! implemented here so that results are bit-identical across platforms and
//! independent of external library defaults.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Seeded RNG wrapper used everywhere in the crate.
pub struct Rng64 {
    inner: ChaCha12Rng,
    /// Spare deviate from the polar method.
    cached_normal: Option<f64>,
}

impl Rng64 {
    pub fn from_seed(seed: u64) -> Self {
        Rng64 {
            inner: ChaCha12Rng::seed_from_u64(seed),
            cached_normal: None,
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on [-1, 1).
    pub fn uniform_symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Standard normal via the Marsaglia polar method.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        loop {
            let u = self.uniform_symmetric();
            let v = self.uniform_symmetric();
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.cached_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Normal with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Fisher-Yates shuffle of `indices`.
    pub fn shuffle(&mut self, indices: &mut [usize]) {
        for i in (1..indices.len()).rev() {
            let j = self.inner.random_range(0..=i);
            indices.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer, used to hash indices into child-seed offsets.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a base seed and a stream index.
pub fn child_seed(base: u64, index: u64) -> u64 {
    base ^ splitmix64(index)
}
