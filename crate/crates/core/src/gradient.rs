//! Sobel image gradients with replicate-padded borders.
//!
//! Kernels are scaled by 1/4 so that a unit step produces a unit response.

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Horizontal derivative taps `(d_row, d_col, weight)`; right minus left.
const SOBEL_X: [(isize, isize, f64); 6] = [
    (-1, 1, 0.25),
    (0, 1, 0.5),
    (1, 1, 0.25),
    (-1, -1, -0.25),
    (0, -1, -0.5),
    (1, -1, -0.25),
];

/// Vertical derivative taps; bottom minus top.
const SOBEL_Y: [(isize, isize, f64); 6] = [
    (1, -1, 0.25),
    (1, 0, 0.5),
    (1, 1, 0.25),
    (-1, -1, -0.25),
    (-1, 0, -0.5),
    (-1, 1, -0.25),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SobelGradient {
    pub gx: ImagePlane,
    pub gy: ImagePlane,
    pub magnitude: ImagePlane,
}

fn check_size(img: &ImagePlane) -> Result<()> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::TooSmall {
            dims: img.dims(),
            min: 3,
        });
    }
    Ok(())
}

fn stencil(img: &ImagePlane, taps: &[(isize, isize, f64)]) -> ImagePlane {
    // Taps come as three positive then three mirrored negative weights; summing
    // each side separately keeps the response of a constant exactly zero.
    let side = |r: usize, c: usize, half: &[(isize, isize, f64)]| -> f64 {
        half.iter()
            .map(|&(dr, dc, w)| w.abs() * img.get_clamped(r as isize + dr, c as isize + dc))
            .sum()
    };
    ImagePlane::from_fn(img.dims(), |r, c| {
        side(r, c, &taps[..3]) - side(r, c, &taps[3..])
    })
}

fn stencil_adjoint(grad: &ImagePlane, taps: &[(isize, isize, f64)], out: &mut ImagePlane) {
    let (h, w) = (grad.height() as isize, grad.width() as isize);
    for r in 0..h {
        for c in 0..w {
            let g = grad.get(r as usize, c as usize);
            if g == 0.0 {
                continue;
            }
            for &(dr, dc, k) in taps {
                let rr = (r + dr).clamp(0, h - 1) as usize;
                let cc = (c + dc).clamp(0, w - 1) as usize;
                let i = rr * w as usize + cc;
                out.data_mut()[i] += k * g;
            }
        }
    }
}

pub fn sobel_gradient(img: &ImagePlane) -> Result<SobelGradient> {
    check_size(img)?;
    let gx = stencil(img, &SOBEL_X);
    let gy = stencil(img, &SOBEL_Y);
    let magnitude = gx.zip_map(&gy, libm::hypot);
    Ok(SobelGradient { gx, gy, magnitude })
}

pub fn sobel_magnitude(img: &ImagePlane) -> Result<ImagePlane> {
    Ok(sobel_gradient(img)?.magnitude)
}

/// Pull a gradient on the Sobel magnitude back to the input image.
///
/// Where the magnitude is exactly zero the (sub)gradient is taken as zero.
pub fn sobel_magnitude_backward(grad: &SobelGradient, grad_magnitude: &ImagePlane) -> ImagePlane {
    let dims = grad_magnitude.dims();
    let mut dgx = ImagePlane::zeros(dims);
    let mut dgy = ImagePlane::zeros(dims);
    for i in 0..dims.len() {
        let m = grad.magnitude.data()[i];
        if m > 0.0 {
            let g = grad_magnitude.data()[i] / m;
            dgx.data_mut()[i] = g * grad.gx.data()[i];
            dgy.data_mut()[i] = g * grad.gy.data()[i];
        }
    }
    let mut out = ImagePlane::zeros(dims);
    stencil_adjoint(&dgx, &SOBEL_X, &mut out);
    stencil_adjoint(&dgy, &SOBEL_Y, &mut out);
    out
}
