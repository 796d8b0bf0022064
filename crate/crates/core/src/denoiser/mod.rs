//! Noise predictors for the sampler.
//!
//! [`OracleDenoiser`] returns the exact noise implied by a known clean state and is
//! used to verify the sampler in isolation. [`TinyDenoiser`] wraps a small trainable
//! convolutional network with hand-written gradients.

mod adam;
mod loss;
mod synth;
mod tiny;
mod train;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, DEFAULT_LEARNING_RATE};
pub use loss::{
    loss_kinks, loss_terms, loss_total, loss_with_grad, FusionTask, LossBreakdown, LossHyper,
};
pub use synth::{synthetic_pair, SyntheticPair};
pub use tiny::{tiny_forward, ConvShape, TinyDenoiser, TinyNetParams, LAYERS};
pub use train::{
    smoothed, tiny_backward, train, train_from, LabeledPair, LossProbe, TrainConfig, TrainOutput,
    TrainingSample, TrainingSet, Unroll,
};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::joint::JointState;
use crate::sampler::DiffusionSchedule;

/// Noise estimate for every block plus the fusion weight map of the first source.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps: JointState,
    pub w1: ImagePlane,
}

pub trait Denoiser {
    fn predict(
        &self,
        x_t: &JointState,
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<DenoiserOutput>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(
        &self,
        x_t: &JointState,
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<DenoiserOutput> {
        (**self).predict(x_t, t, sched)
    }
}

/// Predicts the noise that makes `x̂0` equal a fixed clean state.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    clean: JointState,
    w1: f64,
    normalize: bool,
}

impl OracleDenoiser {
    pub fn new(clean: JointState, w1: f64) -> Result<Self> {
        if !(w1 > 0.0 && w1 < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "oracle weight must lie in (0, 1), got {w1}"
            )));
        }
        Ok(Self {
            clean,
            w1,
            normalize: false,
        })
    }

    /// Match a sampler that divides `x̂0` by `√ᾱ_t`.
    pub fn normalized(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn clean(&self) -> &JointState {
        &self.clean
    }

    pub fn weight(&self) -> f64 {
        self.w1
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(
        &self,
        x_t: &JointState,
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<DenoiserOutput> {
        sched.check_step(t)?;
        let dims = self.clean.dims();
        if x_t.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: x_t.dims(),
            });
        }
        let ab = sched.alpha_bar(t);
        if ab >= 1.0 {
            return Err(Error::InvalidArgument(
                "oracle needs alpha_bar_t < 1".into(),
            ));
        }
        let inv = 1.0 / libm::sqrt(1.0 - ab);
        let signal = if self.normalize { libm::sqrt(ab) } else { 1.0 };
        let eps = x_t.zip_blocks(&self.clean, |x, c| {
            x.zip_map(c, |xv, cv| (xv - signal * cv) * inv)
        });
        Ok(DenoiserOutput {
            eps,
            w1: ImagePlane::filled(dims, self.w1),
        })
    }
}
