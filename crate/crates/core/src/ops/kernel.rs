use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A square, odd-sized, center-anchored convolution stencil with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    /// Build from row-major taps. Taps must sum to 1 within 1e-9.
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if taps.len() != size * size {
            return Err(Error::InvalidArgument(format!(
                "kernel of size {size} needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel taps must be finite and sum to 1, got {sum}"
            )));
        }
        Ok(Self { size, taps })
    }

    /// Rescale arbitrary taps to unit sum.
    pub fn normalized(size: usize, mut taps: Vec<f64>) -> Result<Self> {
        let sum: f64 = taps.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(Error::InvalidArgument("kernel taps sum to zero".into()));
        }
        for t in taps.iter_mut() {
            *t /= sum;
        }
        Self::new(size, taps)
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let half = (size / 2) as f64;
        let taps = (0..size * size)
            .map(|i| {
                let dy = (i / size) as f64 - half;
                let dx = (i % size) as f64 - half;
                libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
            })
            .collect();
        Self::normalized(size, taps)
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        Self::normalized(size, alloc::vec![1.0; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> isize {
        (self.size / 2) as isize
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius();
        self.taps[((dy + r) as usize) * self.size + (dx + r) as usize]
    }

    /// The kernel rotated by 180 degrees; convolving with it is correlation with `self`.
    pub fn flipped(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self {
            size: self.size,
            taps,
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}
