use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::kernel::BlurKernel;
use crate::error::{Error, Result};
use crate::fft::{fft2, to_complex};
use crate::image::{Dims, ImagePlane};

/// Circular blur with its cached transfer function on the input grid.
#[derive(Debug, Clone)]
pub struct Blur {
    kernel: BlurKernel,
    wiener_gamma: f64,
    transfer: Vec<Complex64>,
}

impl Blur {
    pub fn kernel(&self) -> &BlurKernel {
        &self.kernel
    }

    pub fn wiener_gamma(&self) -> f64 {
        self.wiener_gamma
    }

    /// DFT of the zero-padded kernel, center tap placed at the origin.
    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }
}

#[derive(Debug, Clone)]
pub enum DegradationKind {
    Identity,
    Blur(Blur),
    Downsample { scale: usize },
    Composite(Vec<LinearDegradation>),
}

/// A linear degradation `A` with its pseudoinverse applier `A†`.
///
/// The operator is bound to a fixed input grid; observations live on `out_dims`.
#[derive(Debug, Clone)]
pub struct LinearDegradation {
    in_dims: Dims,
    out_dims: Dims,
    kind: DegradationKind,
}

fn transfer_function(kernel: &BlurKernel, dims: Dims) -> Vec<Complex64> {
    let (h, w) = (dims.height as isize, dims.width as isize);
    let mut padded = alloc::vec![0.0; dims.len()];
    let r = kernel.radius();
    for dy in -r..=r {
        for dx in -r..=r {
            let i = dy.rem_euclid(h) as usize * dims.width + dx.rem_euclid(w) as usize;
            padded[i] += kernel.at(dy, dx);
        }
    }
    let mut spectrum = to_complex(&padded);
    fft2(&mut spectrum, dims.height, dims.width, false);
    spectrum
}

/// Multiply the spectrum of `x` by `filter` and return the real part of the inverse transform.
fn spectral_filter(
    x: &ImagePlane,
    filter: impl Fn(Complex64) -> Complex64,
    transfer: &[Complex64],
) -> ImagePlane {
    let dims = x.dims();
    let mut spec = to_complex(x.data());
    fft2(&mut spec, dims.height, dims.width, false);
    for (v, &h) in spec.iter_mut().zip(transfer) {
        *v *= filter(h);
    }
    fft2(&mut spec, dims.height, dims.width, true);
    ImagePlane::new(dims.height, dims.width, spec.iter().map(|c| c.re).collect())
        .expect("dims preserved")
}

/// Below this squared magnitude a frequency counts as a zero of the transfer
/// function when no Wiener regularization is present.
const SPECTRAL_ZERO: f64 = 1e-24;

fn wiener_gain(h: Complex64, gamma: f64) -> Complex64 {
    let power = h.norm_sqr();
    if gamma == 0.0 && power <= SPECTRAL_ZERO {
        return Complex64::new(0.0, 0.0);
    }
    h.conj() / (power + gamma)
}

fn circular_convolve(x: &ImagePlane, kernel: &BlurKernel) -> ImagePlane {
    let (h, w) = (x.height(), x.width());
    let (size, r) = (kernel.size(), kernel.radius());
    let taps = kernel.taps();
    let data = x.data();
    // wrap[i][j]: source coordinate for output coordinate i and tap offset j - r.
    let wrap = |n: usize| -> Vec<usize> {
        (0..n)
            .flat_map(|i| (-r..=r).map(move |d| (i as isize - d).rem_euclid(n as isize) as usize))
            .collect()
    };
    let (rows, cols) = (wrap(h), wrap(w));
    let mut out = alloc::vec![0.0; h * w];
    for row in 0..h {
        let src_rows = &rows[row * size..(row + 1) * size];
        for col in 0..w {
            let src_cols = &cols[col * size..(col + 1) * size];
            let mut acc = 0.0;
            for (ky, &sr) in src_rows.iter().enumerate() {
                let line = &data[sr * w..(sr + 1) * w];
                for (&t, &sc) in taps[ky * size..(ky + 1) * size].iter().zip(src_cols) {
                    acc += t * line[sc];
                }
            }
            out[row * w + col] = acc;
        }
    }
    ImagePlane::new(h, w, out).expect("dims preserved")
}

fn block_mean(x: &ImagePlane, s: usize, out_dims: Dims) -> ImagePlane {
    let norm = 1.0 / (s * s) as f64;
    ImagePlane::from_fn(out_dims, |r, c| {
        let mut acc = 0.0;
        for i in 0..s {
            for j in 0..s {
                acc += x.get(r * s + i, c * s + j);
            }
        }
        acc * norm
    })
}

fn replicate(y: &ImagePlane, s: usize, in_dims: Dims, gain: f64) -> ImagePlane {
    ImagePlane::from_fn(in_dims, |r, c| gain * y.get(r / s, c / s))
}

impl LinearDegradation {
    pub fn identity(dims: Dims) -> Self {
        Self {
            in_dims: dims,
            out_dims: dims,
            kind: DegradationKind::Identity,
        }
    }

    pub fn blur(dims: Dims, kernel: BlurKernel, wiener_gamma: f64) -> Result<Self> {
        if !(wiener_gamma >= 0.0) || !wiener_gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "wiener gamma must be finite and non-negative, got {wiener_gamma}"
            )));
        }
        let transfer = transfer_function(&kernel, dims);
        Ok(Self {
            in_dims: dims,
            out_dims: dims,
            kind: DegradationKind::Blur(Blur {
                kernel,
                wiener_gamma,
                transfer,
            }),
        })
    }

    pub fn downsample(dims: Dims, scale: usize) -> Result<Self> {
        if scale == 0 || dims.height % scale != 0 || dims.width % scale != 0 {
            return Err(Error::InvalidArgument(format!(
                "downsample scale {scale} must divide {dims}"
            )));
        }
        Ok(Self {
            in_dims: dims,
            out_dims: Dims::new(dims.height / scale, dims.width / scale),
            kind: DegradationKind::Downsample { scale },
        })
    }

    /// Chain applied left to right: `children[0]` acts first.
    pub fn composite(children: Vec<LinearDegradation>) -> Result<Self> {
        let first = children
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty composite".into()))?;
        for pair in children.windows(2) {
            if pair[0].out_dims != pair[1].in_dims {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dims,
                    found: pair[1].in_dims,
                });
            }
        }
        let in_dims = first.in_dims;
        let out_dims = children.last().expect("non-empty").out_dims;
        Ok(Self {
            in_dims,
            out_dims,
            kind: DegradationKind::Composite(children),
        })
    }

    pub fn in_dims(&self) -> Dims {
        self.in_dims
    }

    pub fn out_dims(&self) -> Dims {
        self.out_dims
    }

    pub fn kind(&self) -> &DegradationKind {
        &self.kind
    }

    /// `A x`
    pub fn apply(&self, x: &ImagePlane) -> Result<ImagePlane> {
        x.ensure_dims(self.in_dims)?;
        Ok(match &self.kind {
            DegradationKind::Identity => x.clone(),
            DegradationKind::Blur(b) => circular_convolve(x, &b.kernel),
            DegradationKind::Downsample { scale } => block_mean(x, *scale, self.out_dims),
            DegradationKind::Composite(children) => {
                let mut v = x.clone();
                for c in children {
                    v = c.apply(&v)?;
                }
                v
            }
        })
    }

    /// `A x` for blurs evaluated through the DFT instead of the direct stencil.
    pub fn apply_spectral(&self, x: &ImagePlane) -> Result<ImagePlane> {
        x.ensure_dims(self.in_dims)?;
        match &self.kind {
            DegradationKind::Blur(b) => Ok(spectral_filter(x, |h| h, &b.transfer)),
            DegradationKind::Composite(children) => {
                let mut v = x.clone();
                for c in children {
                    v = c.apply_spectral(&v)?;
                }
                Ok(v)
            }
            _ => self.apply(x),
        }
    }

    /// `A† y`: identity, Wiener deconvolution, patch upsampling, or the reversed
    /// chain of child pseudoinverses.
    pub fn apply_pinv(&self, y: &ImagePlane) -> Result<ImagePlane> {
        y.ensure_dims(self.out_dims)?;
        Ok(match &self.kind {
            DegradationKind::Identity => y.clone(),
            DegradationKind::Blur(b) => {
                let gamma = b.wiener_gamma;
                spectral_filter(y, |h| wiener_gain(h, gamma), &b.transfer)
            }
            DegradationKind::Downsample { scale } => replicate(y, *scale, self.in_dims, 1.0),
            DegradationKind::Composite(children) => {
                let mut v = y.clone();
                for c in children.iter().rev() {
                    v = c.apply_pinv(&v)?;
                }
                v
            }
        })
    }

    /// `Aᵀ y`
    pub fn apply_transpose(&self, y: &ImagePlane) -> Result<ImagePlane> {
        y.ensure_dims(self.out_dims)?;
        Ok(match &self.kind {
            DegradationKind::Identity => y.clone(),
            DegradationKind::Blur(b) => circular_convolve(y, &b.kernel.flipped()),
            DegradationKind::Downsample { scale } => {
                let s = *scale as f64;
                replicate(y, *scale, self.in_dims, 1.0 / (s * s))
            }
            DegradationKind::Composite(children) => {
                let mut v = y.clone();
                for c in children.iter().rev() {
                    v = c.apply_transpose(&v)?;
                }
                v
            }
        })
    }

    /// `(A†)ᵀ x`, mapping the clean grid back onto the observation grid.
    pub fn apply_pinv_transpose(&self, x: &ImagePlane) -> Result<ImagePlane> {
        x.ensure_dims(self.in_dims)?;
        Ok(match &self.kind {
            DegradationKind::Identity => x.clone(),
            DegradationKind::Blur(b) => {
                let gamma = b.wiener_gamma;
                spectral_filter(x, |h| wiener_gain(h, gamma).conj(), &b.transfer)
            }
            DegradationKind::Downsample { scale } => {
                let s = *scale as f64;
                block_mean(x, *scale, self.out_dims).scale(s * s)
            }
            DegradationKind::Composite(children) => {
                let mut v = x.clone();
                for c in children {
                    v = c.apply_pinv_transpose(&v)?;
                }
                v
            }
        })
    }

    /// Squared norm of one row of `A`.
    ///
    /// Every supported operator commutes with grid translations (by the
    /// accumulated downsampling factor), so all rows share this norm.
    pub fn row_norm_sq(&self) -> f64 {
        match &self.kind {
            DegradationKind::Identity => 1.0,
            DegradationKind::Blur(b) => b.kernel.energy(),
            DegradationKind::Downsample { scale } => 1.0 / (scale * scale) as f64,
            DegradationKind::Composite(_) => {
                let e0 = ImagePlane::unit(self.out_dims, 0);
                let row = self.apply_transpose(&e0).expect("dims by construction");
                row.dot(&row)
            }
        }
    }
}
