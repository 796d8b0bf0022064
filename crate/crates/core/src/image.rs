//! Row-major real-valued pixel planes.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Height and width of a plane, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn transposed(&self) -> Self {
        Self::new(self.width, self.height)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// An H×W grid of 64-bit intensities, nominally in `[0, 1]`.
///
/// Values are never clamped by library operations; clamping happens only when
/// quantizing for output.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    dims: Dims,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "plane dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(alloc::format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            dims: Dims::new(height, width),
            data,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for r in 0..dims.height {
            for c in 0..dims.width {
                data.push(f(r, c));
            }
        }
        Self { dims, data }
    }

    /// The plane that is 1 at `index` (row-major) and 0 elsewhere.
    pub fn unit(dims: Dims, index: usize) -> Self {
        let mut p = Self::zeros(dims);
        p.data[index] = 1.0;
        p
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dims.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dims.width + col] = value;
    }

    /// Value at `(row, col)` with out-of-range coordinates replicated from the border.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.dims.height as isize - 1) as usize;
        let c = col.clamp(0, self.dims.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn ensure_dims(&self, expected: Dims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dims,
            });
        }
        Ok(())
    }

    pub fn ensure_same_dims(&self, other: &ImagePlane) -> Result<()> {
        other.ensure_dims(self.dims)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination. Panics on dimension mismatch; callers validate first.
    pub fn zip_map(&self, other: &ImagePlane, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dims, other.dims, "zip_map on mismatched planes");
        Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ImagePlane) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ImagePlane) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ImagePlane) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| k * v)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &ImagePlane) {
        assert_eq!(self.dims, other.dims, "axpy on mismatched planes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn transpose(&self) -> Self {
        let d = self.dims;
        Self::from_fn(d.transposed(), |r, c| self.get(c, r))
    }

    pub fn dot(&self, other: &ImagePlane) -> f64 {
        assert_eq!(self.dims, other.dims, "dot on mismatched planes");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ImagePlane) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched planes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Integer translation with wrap-around.
    pub fn roll(&self, dr: isize, dc: isize) -> Self {
        let (h, w) = (self.height() as isize, self.width() as isize);
        Self::from_fn(self.dims, |r, c| {
            let sr = (r as isize - dr).rem_euclid(h) as usize;
            let sc = (c as isize - dc).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }
}
