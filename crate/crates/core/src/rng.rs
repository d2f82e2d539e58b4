//! Seeded pseudorandom source.
//!
//! Uniform variates come from ChaCha8 (`rand_chacha`), whose output stream is
//! fixed by the seed and identical across platforms. Normal variates use the
//! Box–Muller transform on pairs of uniforms; the second variate of each pair
//! is cached and returned by the next call.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent generator for `(seed, stream)`; streams do not overlap.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a child generator from this generator's seed and `stream`,
    /// independent of how far this generator has advanced.
    pub fn fork(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln() finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forks_differ_and_ignore_parent_position() {
        let mut parent = RngState::new(7);
        let before = parent.fork(3).next_u64();
        parent.uniform();
        assert_eq!(parent.fork(3).next_u64(), before);
        assert_ne!(parent.fork(4).next_u64(), before);
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngState::new(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }
}
