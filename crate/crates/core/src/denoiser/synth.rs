//! Procedural two-modality scenes.
//!
//! Both images share the same object layout. The "thermal" image shows smooth
//! bright masses on a dark background; the "visible" image shows the same objects
//! as hard-edged regions over a striped texture.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::image::{Dims, ImagePlane};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub thermal: ImagePlane,
    pub visible: ImagePlane,
}

struct Object {
    cy: f64,
    cx: f64,
    radius: f64,
    disc: bool,
    heat: f64,
    shade: f64,
}

impl Object {
    fn inside(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        if self.disc {
            dy * dy + dx * dx <= self.radius * self.radius
        } else {
            dy.abs() <= self.radius && dx.abs() <= 0.7 * self.radius
        }
    }
}

pub fn synthetic_pair(dims: Dims, rng: &mut SeededRng) -> SyntheticPair {
    let size = dims.height.min(dims.width) as f64;
    let count = 2 + rng.below(3);
    let objects: Vec<Object> = (0..count)
        .map(|_| Object {
            cy: rng.uniform_range(0.15, 0.85) * dims.height as f64,
            cx: rng.uniform_range(0.15, 0.85) * dims.width as f64,
            radius: rng.uniform_range(0.08, 0.22) * size,
            disc: rng.uniform() < 0.5,
            heat: rng.uniform_range(0.5, 0.85),
            shade: rng.uniform_range(0.05, 0.95),
        })
        .collect();

    let ramp = rng.uniform_range(-0.05, 0.05);
    let thermal = ImagePlane::from_fn(dims, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v = 0.1 + ramp * (y / dims.height as f64);
        for o in &objects {
            let s = 0.6 * o.radius;
            let d2 = (y - o.cy) * (y - o.cy) + (x - o.cx) * (x - o.cx);
            v += o.heat * libm::exp(-d2 / (2.0 * s * s));
        }
        v.clamp(0.0, 1.0)
    });

    let angle = rng.uniform_range(0.0, PI);
    let period = rng.uniform_range(3.0, 7.0);
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let (fy, fx) = (libm::sin(angle) / period, libm::cos(angle) / period);
    let visible = ImagePlane::from_fn(dims, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let stripes = libm::sin(2.0 * PI * (fy * y + fx * x) + phase);
        let mut v = 0.45 + 0.15 * stripes;
        for o in &objects {
            if o.inside(y, x) {
                let grain = if (r + c) % 2 == 0 { 0.04 } else { -0.04 };
                v = o.shade + grain;
            }
        }
        v.clamp(0.0, 1.0)
    });
    SyntheticPair { thermal, visible }
}
