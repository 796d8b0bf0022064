//! Discrete Fourier transforms of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 transform; other lengths go
//! through Bluestein's chirp-z algorithm on a padded power-of-two grid. The
//! inverse transform carries the `1/n` normalization.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

fn twiddle(k: usize, n: usize, sign: f64) -> Complex64 {
    let angle = sign * 2.0 * PI * k as f64 / n as f64;
    Complex64::new(libm::cos(angle), libm::sin(angle))
}

/// Radix-2 roots `exp(sign·2πi k/n)` for `k < n/2`; a stage of length `len` uses every
/// `n/len`-th entry.
fn radix2_roots(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n / 2).map(|k| twiddle(k, n, sign)).collect()
}

fn radix2(buf: &mut [Complex64], roots: &[Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two() && roots.len() == n / 2);
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * roots[k * stride];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

enum Kind {
    Radix2 {
        roots: Vec<Complex64>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        /// Spectrum of the conjugate chirp on the padded grid, pre-scaled by `1/m`.
        kernel: Vec<Complex64>,
        forward: Vec<Complex64>,
        backward: Vec<Complex64>,
        scratch: Vec<Complex64>,
    },
}

/// Precomputed roots for repeated transforms of one length and direction.
struct Plan {
    n: usize,
    inverse: bool,
    kind: Kind,
}

impl Plan {
    fn new(n: usize, inverse: bool) -> Self {
        let sign = if inverse { 1.0 } else { -1.0 };
        let kind = if n.is_power_of_two() {
            Kind::Radix2 {
                roots: radix2_roots(n, sign),
            }
        } else {
            let m = (2 * n - 1).next_power_of_two();
            // chirp[k] = exp(sign * i * pi * k^2 / n); k^2 is reduced mod 2n to keep the angle small.
            let chirp: Vec<Complex64> = (0..n)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                    let angle = sign * PI * k2 / n as f64;
                    Complex64::new(libm::cos(angle), libm::sin(angle))
                })
                .collect();
            let forward = radix2_roots(m, -1.0);
            let backward = radix2_roots(m, 1.0);
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..n {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            radix2(&mut kernel, &forward);
            let scale = 1.0 / m as f64;
            for v in kernel.iter_mut() {
                *v *= scale;
            }
            Kind::Bluestein {
                chirp,
                kernel,
                forward,
                backward,
                scratch: vec![Complex64::new(0.0, 0.0); m],
            }
        };
        Self { n, inverse, kind }
    }

    fn run(&mut self, buf: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        if n <= 1 {
            return;
        }
        match &mut self.kind {
            Kind::Radix2 { roots } => radix2(buf, roots),
            Kind::Bluestein {
                chirp,
                kernel,
                forward,
                backward,
                scratch,
            } => {
                scratch.fill(Complex64::new(0.0, 0.0));
                for k in 0..n {
                    scratch[k] = buf[k] * chirp[k];
                }
                radix2(scratch, forward);
                for (x, y) in scratch.iter_mut().zip(kernel.iter()) {
                    *x *= y;
                }
                radix2(scratch, backward);
                for k in 0..n {
                    buf[k] = scratch[k] * chirp[k];
                }
            }
        }
        if self.inverse {
            let s = 1.0 / n as f64;
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// In-place 1-D DFT. Forward uses `exp(-2πi jk/n)`.
pub fn fft(buf: &mut [Complex64], inverse: bool) {
    Plan::new(buf.len(), inverse).run(buf);
}

/// In-place 2-D DFT of a row-major `height × width` grid, rows then columns.
pub fn fft2(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    assert_eq!(data.len(), height * width);
    let mut rows = Plan::new(width, inverse);
    for row in data.chunks_exact_mut(width) {
        rows.run(row);
    }
    let mut cols = if height == width {
        rows
    } else {
        Plan::new(height, inverse)
    };
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        cols.run(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

pub fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
