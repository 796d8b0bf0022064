//! File formats and the command-line front end for `jointfuse-core`.
//!
//! * [`pgm`]: grayscale Netpbm images.
//! * [`params`]: binary parameter files for the tiny denoiser.
//! * [`manifest`]: the `run.txt` record of a resolved invocation.
//! * [`cli`]: subcommands and exit-code mapping.

pub mod cli;
pub mod manifest;
pub mod params;
pub mod pgm;

pub use jointfuse_core as core;
