//! Training objective: source reconstruction plus a task-specific fusion term.
//!
//! All norms are per-pixel means so the weights are independent of image size.

use alloc::vec::Vec;

use crate::error::Result;
use crate::gradient::{sobel_gradient, sobel_magnitude, sobel_magnitude_backward};
use crate::image::ImagePlane;
use crate::joint::JointState;
use crate::metrics::{ssim, ssim_with_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionTask {
    /// Intensity max plus Sobel-gradient max.
    IrVis,
    /// L1 plus SSIM against each source.
    Medical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossHyper {
    /// Weight of the fusion term.
    pub lambda: f64,
    /// Gradient-term weight (`IrVis`).
    pub gamma: f64,
    /// SSIM-term weight (`Medical`).
    pub phi: f64,
    pub task: FusionTask,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            gamma: 20.0,
            phi: 10.0,
            task: FusionTask::IrVis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    /// L1 part of the fusion term.
    pub fusion_intensity: f64,
    /// Weighted gradient or SSIM part of the fusion term.
    pub fusion_structure: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn fusion(&self) -> f64 {
        self.fusion_intensity + self.fusion_structure
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean_abs(a: &ImagePlane, b: &ImagePlane) -> f64 {
    a.zip_map(b, |x, y| (x - y).abs()).mean()
}

/// `d mean|a - b| / d a`, with `sign(0) = 0`.
fn mean_abs_grad(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
    let n = a.len() as f64;
    a.zip_map(b, |x, y| sign(x - y) / n)
}

fn elementwise_max(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
    a.zip_map(b, f64::max)
}

/// Loss of a predicted joint state against the clean sources.
pub fn loss_total(
    pred: &JointState,
    labels: (&ImagePlane, &ImagePlane),
    h: &LossHyper,
) -> Result<LossBreakdown> {
    Ok(loss_with_grad(pred, labels, h)?.0)
}

/// Loss and its gradient with respect to every block of `pred`.
pub fn loss_with_grad(
    pred: &JointState,
    labels: (&ImagePlane, &ImagePlane),
    h: &LossHyper,
) -> Result<(LossBreakdown, JointState)> {
    let (l1, l2) = labels;
    let dims = pred.dims();
    l1.ensure_dims(dims)?;
    l2.ensure_dims(dims)?;
    let n = dims.len() as f64;

    let reconstruction = mean_abs(&pred.x1, l1) + mean_abs(&pred.x2, l2);
    let g1 = mean_abs_grad(&pred.x1, l1);
    let g2 = mean_abs_grad(&pred.x2, l2);

    let (intensity, structure, gf) = match h.task {
        FusionTask::IrVis => {
            let target = elementwise_max(l1, l2);
            let intensity = mean_abs(&pred.xf, &target);
            let mut gf = mean_abs_grad(&pred.xf, &target);

            let grad_f = sobel_gradient(&pred.xf)?;
            let target_mag = elementwise_max(&sobel_magnitude(l1)?, &sobel_magnitude(l2)?);
            let structure = h.gamma * mean_abs(&grad_f.magnitude, &target_mag);
            let g_mag = grad_f
                .magnitude
                .zip_map(&target_mag, |m, t| h.gamma * sign(m - t) / n);
            gf.axpy(1.0, &sobel_magnitude_backward(&grad_f, &g_mag));
            (intensity, structure, gf)
        }
        FusionTask::Medical => {
            let mut intensity = 0.0;
            let mut structure = 0.0;
            let mut gf = ImagePlane::zeros(dims);
            for label in [l1, l2] {
                intensity += mean_abs(&pred.xf, label);
                gf.axpy(1.0, &mean_abs_grad(&pred.xf, label));
                let (s, ds) = ssim_with_grad(&pred.xf, label)?;
                structure += h.phi * (1.0 - s);
                gf.axpy(-h.phi, &ds);
            }
            (intensity, structure, gf)
        }
    };

    let breakdown = LossBreakdown {
        reconstruction,
        fusion_intensity: intensity,
        fusion_structure: structure,
        total: reconstruction + h.lambda * (intensity + structure),
    };
    let grad = JointState::new(g1, g2, gf.scale(h.lambda))?;
    Ok((breakdown, grad))
}

/// Sign pattern of every non-differentiable point the loss passes through.
///
/// The loss is smooth in `pred` on any region where this pattern is constant.
/// Per-pixel contributions to the total loss, in a fixed order; they sum to `total`.
///
/// Differencing two evaluations term by term avoids the cancellation of subtracting
/// two large totals, which matters for finite-difference probes.
pub fn loss_terms(
    pred: &JointState,
    labels: (&ImagePlane, &ImagePlane),
    h: &LossHyper,
) -> Result<Vec<f64>> {
    let (l1, l2) = labels;
    let dims = pred.dims();
    l1.ensure_dims(dims)?;
    l2.ensure_dims(dims)?;
    let n = dims.len() as f64;
    let mut out = Vec::new();
    let mut push = |a: &ImagePlane, b: &ImagePlane, w: f64| {
        out.extend(
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| w * (x - y).abs() / n),
        );
    };
    push(&pred.x1, l1, 1.0);
    push(&pred.x2, l2, 1.0);
    match h.task {
        FusionTask::IrVis => {
            push(&pred.xf, &elementwise_max(l1, l2), h.lambda);
            let mag = sobel_magnitude(&pred.xf)?;
            let target = elementwise_max(&sobel_magnitude(l1)?, &sobel_magnitude(l2)?);
            push(&mag, &target, h.lambda * h.gamma);
        }
        FusionTask::Medical => {
            push(&pred.xf, l1, h.lambda);
            push(&pred.xf, l2, h.lambda);
            out.push(h.lambda * h.phi * (1.0 - ssim(&pred.xf, l1)?));
            out.push(h.lambda * h.phi * (1.0 - ssim(&pred.xf, l2)?));
        }
    }
    Ok(out)
}

pub fn loss_kinks(
    pred: &JointState,
    labels: (&ImagePlane, &ImagePlane),
    h: &LossHyper,
) -> Result<Vec<i8>> {
    let (l1, l2) = labels;
    let mut out = Vec::new();
    let mut push = |a: &ImagePlane, b: &ImagePlane| {
        out.extend(
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| sign(x - y) as i8),
        );
    };
    push(&pred.x1, l1);
    push(&pred.x2, l2);
    match h.task {
        FusionTask::IrVis => {
            push(&pred.xf, &elementwise_max(l1, l2));
            let mag = sobel_magnitude(&pred.xf)?;
            let target = elementwise_max(&sobel_magnitude(l1)?, &sobel_magnitude(l2)?);
            push(&mag, &target);
            push(&mag, &ImagePlane::zeros(mag.dims()));
        }
        FusionTask::Medical => {
            push(&pred.xf, l1);
            push(&pred.xf, l2);
        }
    }
    Ok(out)
}
