//! Portable seeded randomness.
//!
//! The generator is xoshiro256++ seeded through splitmix64; Gaussian draws use
//! the Box–Muller transform with `libm` transcendental functions, so a seed
//! yields the same stream on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::image::ImagePlane;

/// Deterministic generator for uniform and standard-normal samples.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    /// Derive an independent generator; used to give each worker its own stream.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}

/// A plane of i.i.d. standard-normal samples.
pub fn standard_normal_plane(dims: crate::image::Dims, rng: &mut SeededRng) -> ImagePlane {
    ImagePlane::from_fn(dims, |_, _| rng.normal())
}

/// Additive white Gaussian noise, `img + sigma * z`. The result is not clamped.
pub fn gaussian_noise(img: &ImagePlane, sigma: f64, rng: &mut SeededRng) -> ImagePlane {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return img.clone();
    }
    img.map(|v| v + sigma * rng.normal())
}
