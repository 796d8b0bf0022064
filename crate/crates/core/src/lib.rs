//! Numerical core for degradation-aware diffusion image fusion.
//!
//! Two degraded source images are fused by a few-step deterministic DDIM
//! iteration. After every denoising step the joint state `[x1, x2, xf]` is
//! projected back onto the joint observation model, which stacks both
//! degradation constraints with the per-pixel fusion rule
//! `xf = W1 * x1 + (1 - W1) * x2`.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the
//! command-line front end live in the `jointfuse` crate.
#![no_std]

extern crate alloc;

pub mod denoiser;
pub mod error;
pub mod fft;
pub mod gradient;
pub mod image;
pub mod joint;
pub mod metrics;
pub mod ops;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use image::{Dims, ImagePlane};
pub use rng::SeededRng;
