use alloc::string::String;

use crate::image::Dims;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: Dims, found: Dims },

    #[error("image {dims} is smaller than the required {min}x{min}")]
    TooSmall { dims: Dims, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("materialization needs {pixels} pixels per side, cap is {cap}")]
    SizeCap { pixels: usize, cap: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("invalid diffusion schedule: {0}")]
    Schedule(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite state after reverse step t={t}")]
    NonFiniteState { t: usize },

    #[error("operator spec error at byte {position}: {message}")]
    OpSpec { position: usize, message: String },
}

pub type Result<T> = core::result::Result<T, Error>;
