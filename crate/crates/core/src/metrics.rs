//! Reference-free fusion quality scores.
//!
//! * [`ssim`]: mean structural similarity over 8×8 windows at stride 1,
//!   population statistics, `C1 = 0.01²`, `C2 = 0.03²` for unit dynamic range.
//! * [`q_mi`]: normalized mutual information,
//!   `2·[MI(F,A)/(H(F)+H(A)) + MI(F,B)/(H(F)+H(B))]`, from 64-bin histograms of
//!   intensities clamped to `[0, 1]`. Ranges over `[0, 2]`.
//! * [`q_abf`]: Xydeas–Petrović edge preservation with Sobel strength and
//!   orientation and the usual sigmoid constants.

use alloc::vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gradient::{sobel_gradient, SobelGradient};
use crate::image::ImagePlane;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const MI_BINS: usize = 64;

pub const QABF_GAMMA_G: f64 = 0.9994;
pub const QABF_KAPPA_G: f64 = 15.0;
pub const QABF_SIGMA_G: f64 = 0.5;
pub const QABF_GAMMA_A: f64 = 0.9879;
pub const QABF_KAPPA_A: f64 = 22.0;
pub const QABF_SIGMA_A: f64 = 0.8;

/// Scores of one fused image against its two sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub q_mi: f64,
    pub q_abf: f64,
    pub ssim_src1: f64,
    pub ssim_src2: f64,
}

impl MetricReport {
    pub fn evaluate(src1: &ImagePlane, src2: &ImagePlane, fused: &ImagePlane) -> Result<Self> {
        Ok(Self {
            q_mi: q_mi(src1, src2, fused)?,
            q_abf: q_abf(src1, src2, fused)?,
            ssim_src1: ssim(src1, fused)?,
            ssim_src2: ssim(src2, fused)?,
        })
    }

    /// Mean SSIM of the fused image against both sources.
    pub fn ssim(&self) -> f64 {
        0.5 * (self.ssim_src1 + self.ssim_src2)
    }
}

fn check_pair(a: &ImagePlane, b: &ImagePlane, min: usize) -> Result<()> {
    a.ensure_same_dims(b)?;
    if a.height() < min || a.width() < min {
        return Err(Error::TooSmall {
            dims: a.dims(),
            min,
        });
    }
    Ok(())
}

struct WindowStats {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn window_stats(a: &ImagePlane, b: &ImagePlane, r0: usize, c0: usize) -> WindowStats {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            sa += a.get(r, c);
            sb += b.get(r, c);
        }
    }
    let (mean_a, mean_b) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for r in r0..r0 + SSIM_WINDOW {
        for c in c0..c0 + SSIM_WINDOW {
            let da = a.get(r, c) - mean_a;
            let db = b.get(r, c) - mean_b;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    WindowStats {
        mean_a,
        mean_b,
        var_a: va / n,
        var_b: vb / n,
        cov: cov / n,
    }
}

fn window_ssim(s: &WindowStats) -> f64 {
    let lum = (2.0 * s.mean_a * s.mean_b + SSIM_C1)
        / (s.mean_a * s.mean_a + s.mean_b * s.mean_b + SSIM_C1);
    let cs = (2.0 * s.cov + SSIM_C2) / (s.var_a + s.var_b + SSIM_C2);
    lum * cs
}

pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_pair(a, b, SSIM_WINDOW)?;
    let (rows, cols) = (a.height() - SSIM_WINDOW + 1, a.width() - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            total += window_ssim(&window_stats(a, b, r, c));
        }
    }
    Ok(total / (rows * cols) as f64)
}

/// SSIM together with its gradient with respect to `a`.
pub fn ssim_with_grad(a: &ImagePlane, b: &ImagePlane) -> Result<(f64, ImagePlane)> {
    check_pair(a, b, SSIM_WINDOW)?;
    let (rows, cols) = (a.height() - SSIM_WINDOW + 1, a.width() - SSIM_WINDOW + 1);
    let windows = (rows * cols) as f64;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut grad = ImagePlane::zeros(a.dims());
    let mut total = 0.0;
    for r0 in 0..rows {
        for c0 in 0..cols {
            let s = window_stats(a, b, r0, c0);
            let num1 = 2.0 * s.mean_a * s.mean_b + SSIM_C1;
            let den1 = s.mean_a * s.mean_a + s.mean_b * s.mean_b + SSIM_C1;
            let num2 = 2.0 * s.cov + SSIM_C2;
            let den2 = s.var_a + s.var_b + SSIM_C2;
            let (lum, cs) = (num1 / den1, num2 / den2);
            total += lum * cs;

            let dlum_dmean = (2.0 * s.mean_b * den1 - num1 * 2.0 * s.mean_a) / (den1 * den1);
            let dcs_dvar = -num2 / (den2 * den2);
            let dcs_dcov = 2.0 / den2;
            let k_mean = cs * dlum_dmean / n;
            let k_var = lum * dcs_dvar * 2.0 / n;
            let k_cov = lum * dcs_dcov / n;
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let g = k_mean
                        + k_var * (a.get(r, c) - s.mean_a)
                        + k_cov * (b.get(r, c) - s.mean_b);
                    let i = r * a.width() + c;
                    grad.data_mut()[i] += g / windows;
                }
            }
        }
    }
    Ok((total / windows, grad))
}

fn bin_of(v: f64) -> usize {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * MI_BINS as f64) as usize).min(MI_BINS - 1)
}

fn entropy_bits(counts: &[u64], total: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * libm::log2(p);
        }
    }
    h
}

/// Entropies `H(X)`, `H(Y)` and mutual information `I(X;Y)` from binned intensities.
fn mutual_information(x: &ImagePlane, y: &ImagePlane) -> (f64, f64, f64) {
    let mut hx = [0u64; MI_BINS];
    let mut hy = [0u64; MI_BINS];
    let mut joint = vec![0u64; MI_BINS * MI_BINS];
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let (i, j) = (bin_of(a), bin_of(b));
        hx[i] += 1;
        hy[j] += 1;
        joint[i * MI_BINS + j] += 1;
    }
    let n = x.len() as f64;
    let ex = entropy_bits(&hx, n);
    let ey = entropy_bits(&hy, n);
    let exy = entropy_bits(&joint, n);
    (ex, ey, ex + ey - exy)
}

/// Normalized-MI score with a flag for terms whose entropies were all zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmiReport {
    pub value: f64,
    pub degenerate: bool,
}

pub fn q_mi_report(src1: &ImagePlane, src2: &ImagePlane, fused: &ImagePlane) -> Result<QmiReport> {
    src1.ensure_same_dims(src2)?;
    src1.ensure_same_dims(fused)?;
    let mut value = 0.0;
    let mut degenerate = false;
    for src in [src1, src2] {
        let (hf, hs, mi) = mutual_information(fused, src);
        let denom = hf + hs;
        if denom > 0.0 {
            value += 2.0 * mi / denom;
        } else {
            degenerate = true;
        }
    }
    Ok(QmiReport { value, degenerate })
}

pub fn q_mi(src1: &ImagePlane, src2: &ImagePlane, fused: &ImagePlane) -> Result<f64> {
    Ok(q_mi_report(src1, src2, fused)?.value)
}

fn orientation(gx: f64, gy: f64) -> f64 {
    if gx == 0.0 {
        if gy == 0.0 {
            0.0
        } else {
            PI / 2.0
        }
    } else {
        libm::atan(gy / gx)
    }
}

fn edge_preservation(src: &SobelGradient, fused: &SobelGradient, i: usize) -> f64 {
    let (ga, gf) = (src.magnitude.data()[i], fused.magnitude.data()[i]);
    let strength = if ga > gf {
        gf / ga
    } else if ga == gf {
        1.0
    } else {
        ga / gf
    };
    let aa = orientation(src.gx.data()[i], src.gy.data()[i]);
    let af = orientation(fused.gx.data()[i], fused.gy.data()[i]);
    let alignment = ((aa - af).abs() - PI / 2.0).abs() * 2.0 / PI;
    let qg = QABF_GAMMA_G / (1.0 + libm::exp(-QABF_KAPPA_G * (strength - QABF_SIGMA_G)));
    let qa = QABF_GAMMA_A / (1.0 + libm::exp(-QABF_KAPPA_A * (alignment - QABF_SIGMA_A)));
    qg * qa
}

pub fn q_abf(src1: &ImagePlane, src2: &ImagePlane, fused: &ImagePlane) -> Result<f64> {
    check_pair(src1, src2, 3)?;
    check_pair(src1, fused, 3)?;
    let (ga, gb, gf) = (
        sobel_gradient(src1)?,
        sobel_gradient(src2)?,
        sobel_gradient(fused)?,
    );
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..src1.len() {
        let wa = ga.magnitude.data()[i];
        let wb = gb.magnitude.data()[i];
        num += edge_preservation(&ga, &gf, i) * wa + edge_preservation(&gb, &gf, i) * wb;
        den += wa + wb;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
