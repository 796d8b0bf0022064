#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use jointfuse::core::denoiser::synthetic_pair;
use jointfuse::core::{Dims, ImagePlane, SeededRng};
use jointfuse::pgm::save_pgm;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_jointfuse")
}

/// Run the binary in `dir` and return its exit code.
pub fn run_in(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn jointfuse");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().expect("exit code")
}

pub fn run_capture(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn jointfuse");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

/// Write a synthetic thermal/visible pair as `src1.pgm`, `src2.pgm`.
pub fn write_sources(dir: &Path, dims: Dims, seed: u64) -> (PathBuf, PathBuf) {
    let p = synthetic_pair(dims, &mut SeededRng::new(seed));
    let (a, b) = (dir.join("src1.pgm"), dir.join("src2.pgm"));
    save_pgm(&p.thermal, &a, 255).unwrap();
    save_pgm(&p.visible, &b, 255).unwrap();
    (a, b)
}

pub fn gradient_image(dims: Dims) -> ImagePlane {
    ImagePlane::from_fn(dims, |r, c| {
        0.5 + 0.4 * ((r as f64 / 5.0).sin() * (c as f64 / 7.0).cos())
    })
}
