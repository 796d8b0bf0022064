//! A four-layer 3×3 convolutional regressor.
//!
//! Input channels are `[x1, x2, xf, t/T]`. Two ReLU layers of 16 channels feed a
//! 3-channel noise head and a 1-channel sigmoid weight head. Borders are
//! replicate-padded so outputs have the input's size.

use alloc::vec;
use alloc::vec::Vec;

use super::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::image::{Dims, ImagePlane};
use crate::joint::JointState;
use crate::rng::SeededRng;
use crate::sampler::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    pub const fn weight_len(&self) -> usize {
        self.cin * self.cout * 9
    }

    pub const fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `conv1`, `conv2`, `head_eps`, `head_w`, in storage order.
pub const LAYERS: [ConvShape; 4] = [
    ConvShape { cin: 4, cout: 16 },
    ConvShape { cin: 16, cout: 16 },
    ConvShape { cin: 16, cout: 3 },
    ConvShape { cin: 16, cout: 1 },
];

const fn total_len() -> usize {
    let mut n = 0;
    let mut i = 0;
    while i < LAYERS.len() {
        n += LAYERS[i].len();
        i += 1;
    }
    n
}

/// Flat parameter vector. Each layer stores weights `[cout][cin][3][3]` then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetParams {
    values: Vec<f64>,
}

impl TinyNetParams {
    pub const LEN: usize = total_len();

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; Self::LEN],
        }
    }

    /// He-normal hidden layers, heads scaled down so the untrained net predicts
    /// small noise and `W1 ≈ 0.5`. Biases start at zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut p = Self::zeros();
        for (layer, shape) in LAYERS.iter().enumerate() {
            let fan_in = (shape.cin * 9) as f64;
            let std = if layer < 2 {
                libm::sqrt(2.0 / fan_in)
            } else {
                0.1 * libm::sqrt(1.0 / fan_in)
            };
            let (w, _) = p.layer_mut(layer);
            for v in w.iter_mut() {
                *v = std * rng.normal();
            }
        }
        p
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} parameters, got {}",
                Self::LEN,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn offset(layer: usize) -> usize {
        LAYERS[..layer].iter().map(ConvShape::len).sum()
    }

    /// `(weights, biases)` of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let s = LAYERS[layer];
        let start = Self::offset(layer);
        self.values[start..start + s.len()].split_at(s.weight_len())
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let s = LAYERS[layer];
        let start = Self::offset(layer);
        self.values[start..start + s.len()].split_at_mut(s.weight_len())
    }
}

/// Replicate-pad a stack of `c` planes by one pixel on every side.
fn pad(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for pr in 0..ph {
            let r = pr.saturating_sub(1).min(h - 1);
            for pc in 0..pw {
                let cc = pc.saturating_sub(1).min(w - 1);
                dst[pr * pw + pc] = src[r * w + cc];
            }
        }
    }
    out
}

fn conv_forward(
    shape: ConvShape,
    weights: &[f64],
    bias: &[f64],
    padded: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; shape.cout * h * w];
    for o in 0..shape.cout {
        let dst = &mut out[o * h * w..(o + 1) * h * w];
        dst.fill(bias[o]);
        for i in 0..shape.cin {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            let k = &weights[(o * shape.cin + i) * 9..(o * shape.cin + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let kv = k[ky * 3 + kx];
                    for r in 0..h {
                        let row = &src[(r + ky) * pw + kx..(r + ky) * pw + kx + w];
                        for (d, s) in dst[r * w..(r + 1) * w].iter_mut().zip(row) {
                            *d += kv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the gradient on the unpadded input
/// when `want_input` is set.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    shape: ConvShape,
    weights: &[f64],
    padded: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let (ph, pw) = (h + 2, w + 2);
    let mut gpad = if want_input {
        vec![0.0; shape.cin * ph * pw]
    } else {
        Vec::new()
    };
    for o in 0..shape.cout {
        let go = &grad_out[o * h * w..(o + 1) * h * w];
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..shape.cin {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            let base = (o * shape.cin + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0;
                    for r in 0..h {
                        let row = &src[(r + ky) * pw + kx..(r + ky) * pw + kx + w];
                        acc += go[r * w..(r + 1) * w]
                            .iter()
                            .zip(row)
                            .map(|(g, s)| g * s)
                            .sum::<f64>();
                    }
                    grad_w[base + ky * 3 + kx] += acc;
                    if want_input {
                        let kv = weights[base + ky * 3 + kx];
                        let gp = &mut gpad[i * ph * pw..(i + 1) * ph * pw];
                        for r in 0..h {
                            let row = &mut gp[(r + ky) * pw + kx..(r + ky) * pw + kx + w];
                            for (d, g) in row.iter_mut().zip(&go[r * w..(r + 1) * w]) {
                                *d += kv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    if !want_input {
        return None;
    }
    let mut gin = vec![0.0; shape.cin * h * w];
    for ch in 0..shape.cin {
        let src = &gpad[ch * ph * pw..(ch + 1) * ph * pw];
        let dst = &mut gin[ch * h * w..(ch + 1) * h * w];
        for pr in 0..ph {
            let r = pr.saturating_sub(1).min(h - 1);
            for pc in 0..pw {
                let c = pc.saturating_sub(1).min(w - 1);
                dst[r * w + c] += src[pr * pw + pc];
            }
        }
    }
    Some(gin)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    dims: Dims,
    pad0: Vec<f64>,
    z1: Vec<f64>,
    pad1: Vec<f64>,
    z2: Vec<f64>,
    pad2: Vec<f64>,
    /// Sigmoid output before clamping into the open interval.
    w_raw: Vec<f64>,
}

impl ForwardCache {
    /// Signs of every ReLU pre-activation; the network is smooth while these hold.
    pub(crate) fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.z1.iter().chain(&self.z2).map(|&z| z > 0.0)
    }
}

fn relu_padded(z: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
    pad(&a, c, h, w)
}

pub(crate) fn forward_cached(
    p: &TinyNetParams,
    x_t: &JointState,
    t: usize,
    steps: usize,
) -> (DenoiserOutput, ForwardCache) {
    let dims = x_t.dims();
    let (h, w) = (dims.height, dims.width);
    let n = dims.len();
    let mut input = Vec::with_capacity(4 * n);
    for b in x_t.blocks() {
        input.extend_from_slice(b.data());
    }
    let tau = if steps == 0 {
        0.0
    } else {
        t as f64 / steps as f64
    };
    input.resize(4 * n, tau);

    let pad0 = pad(&input, 4, h, w);
    let (w1, b1) = p.layer(0);
    let z1 = conv_forward(LAYERS[0], w1, b1, &pad0, h, w);
    let pad1 = relu_padded(&z1, LAYERS[0].cout, h, w);
    let (w2, b2) = p.layer(1);
    let z2 = conv_forward(LAYERS[1], w2, b2, &pad1, h, w);
    let pad2 = relu_padded(&z2, LAYERS[1].cout, h, w);
    let (we, be) = p.layer(2);
    let eps = conv_forward(LAYERS[2], we, be, &pad2, h, w);
    let (ww, bw) = p.layer(3);
    let zw = conv_forward(LAYERS[3], ww, bw, &pad2, h, w);
    let w_raw: Vec<f64> = zw.iter().map(|&z| sigmoid(z)).collect();

    let plane = |s: &[f64]| ImagePlane::new(h, w, s.to_vec()).expect("layer output matches dims");
    let eps = JointState::new(
        plane(&eps[..n]),
        plane(&eps[n..2 * n]),
        plane(&eps[2 * n..]),
    )
    .expect("consistent dims");
    let w1 = ImagePlane::new(
        h,
        w,
        w_raw
            .iter()
            .map(|&v| v.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
            .collect(),
    )
    .expect("consistent dims");
    let cache = ForwardCache {
        dims,
        pad0,
        z1,
        pad1,
        z2,
        pad2,
        w_raw,
    };
    (DenoiserOutput { eps, w1 }, cache)
}

/// Pull gradients on the noise and weight heads back to the parameters, accumulating into `grad`.
pub(crate) fn backward_into(
    p: &TinyNetParams,
    cache: &ForwardCache,
    grad_eps: &JointState,
    grad_w1: &ImagePlane,
    grad: &mut [f64],
) {
    let (h, w) = (cache.dims.height, cache.dims.width);
    let n = cache.dims.len();
    assert_eq!(grad.len(), TinyNetParams::LEN);
    let (l0, rest) = grad.split_at_mut(LAYERS[0].len());
    let (l1, rest) = rest.split_at_mut(LAYERS[1].len());
    let (l2, l3) = rest.split_at_mut(LAYERS[2].len());
    let (g1_w, g1_b) = l0.split_at_mut(LAYERS[0].weight_len());
    let (g2_w, g2_b) = l1.split_at_mut(LAYERS[1].weight_len());
    let (ge_w, ge_b) = l2.split_at_mut(LAYERS[2].weight_len());
    let (gw_w, gw_b) = l3.split_at_mut(LAYERS[3].weight_len());

    let mut g_eps = Vec::with_capacity(3 * n);
    for b in grad_eps.blocks() {
        g_eps.extend_from_slice(b.data());
    }
    let g_zw: Vec<f64> = grad_w1
        .data()
        .iter()
        .zip(&cache.w_raw)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();

    let ga2_e = conv_backward(
        LAYERS[2],
        p.layer(2).0,
        &cache.pad2,
        &g_eps,
        h,
        w,
        ge_w,
        ge_b,
        true,
    )
    .unwrap();
    let ga2_w = conv_backward(
        LAYERS[3],
        p.layer(3).0,
        &cache.pad2,
        &g_zw,
        h,
        w,
        gw_w,
        gw_b,
        true,
    )
    .unwrap();
    let g_z2: Vec<f64> = ga2_e
        .iter()
        .zip(&ga2_w)
        .zip(&cache.z2)
        .map(|((a, b), &z)| if z > 0.0 { a + b } else { 0.0 })
        .collect();
    let ga1 = conv_backward(
        LAYERS[1],
        p.layer(1).0,
        &cache.pad1,
        &g_z2,
        h,
        w,
        g2_w,
        g2_b,
        true,
    )
    .unwrap();
    let g_z1: Vec<f64> = ga1
        .iter()
        .zip(&cache.z1)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    conv_backward(
        LAYERS[0],
        p.layer(0).0,
        &cache.pad0,
        &g_z1,
        h,
        w,
        g1_w,
        g1_b,
        false,
    );
}

/// Evaluate the network on a joint state at step `t` of `steps`.
pub fn tiny_forward(p: &TinyNetParams, x_t: &JointState, t: usize, steps: usize) -> DenoiserOutput {
    forward_cached(p, x_t, t, steps).0
}

#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    pub params: TinyNetParams,
}

impl TinyDenoiser {
    pub fn new(params: TinyNetParams) -> Self {
        Self { params }
    }
}

impl Denoiser for TinyDenoiser {
    fn predict(
        &self,
        x_t: &JointState,
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<DenoiserOutput> {
        sched.check_step(t)?;
        let dims = x_t.dims();
        if dims.height < 3 || dims.width < 3 {
            return Err(Error::TooSmall { dims, min: 3 });
        }
        Ok(tiny_forward(&self.params, x_t, t, sched.steps()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(dims: Dims, seed: u64) -> JointState {
        let mut rng = SeededRng::new(seed);
        let mut plane = || ImagePlane::from_fn(dims, |_, _| rng.uniform());
        JointState::new(plane(), plane(), plane()).unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(
            TinyNetParams::LEN,
            (4 * 16 * 9 + 16) + (16 * 16 * 9 + 16) + (16 * 3 * 9 + 3) + (16 * 9 + 1)
        );
    }

    #[test]
    fn dead_network_outputs_biases() {
        let mut p = TinyNetParams::zeros();
        p.layer_mut(2).1.copy_from_slice(&[0.1, -0.2, 0.3]);
        let out = tiny_forward(&p, &random_state(Dims::new(5, 7), 1), 2, 3);
        assert!(out.eps.x1.data().iter().all(|&v| v == 0.1));
        assert!(out.eps.x2.data().iter().all(|&v| v == -0.2));
        assert!(out.eps.xf.data().iter().all(|&v| v == 0.3));
        assert!(out.w1.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_dims_follow_input() {
        let p = TinyNetParams::init(4);
        for (h, w) in [(3, 3), (4, 9), (11, 5)] {
            let out = tiny_forward(&p, &random_state(Dims::new(h, w), 2), 1, 3);
            assert_eq!(out.eps.dims(), Dims::new(h, w));
            assert_eq!(out.w1.dims(), Dims::new(h, w));
            assert!(out.w1.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn translation_covariance_in_interior() {
        let p = TinyNetParams::init(9);
        let d = Dims::new(16, 16);
        let x = random_state(d, 3);
        let shifted = x.map_blocks(|b| b.roll(1, 1));
        let a = tiny_forward(&p, &x, 2, 3);
        let b = tiny_forward(&p, &shifted, 2, 3);
        for r in 4..12 {
            for c in 4..12 {
                for (pa, pb) in a.eps.blocks().iter().zip(b.eps.blocks()) {
                    assert!((pa.get(r, c) - pb.get(r + 1, c + 1)).abs() <= 1e-10);
                }
                assert!((a.w1.get(r, c) - b.w1.get(r + 1, c + 1)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        let (h, w) = (4, 5);
        let shape = ConvShape { cin: 2, cout: 3 };
        let mut rng = SeededRng::new(21);
        let weights: Vec<f64> = (0..shape.weight_len()).map(|_| rng.normal()).collect();
        let zero_bias = vec![0.0; shape.cout];
        let x: Vec<f64> = (0..shape.cin * h * w).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..shape.cout * h * w).map(|_| rng.normal()).collect();
        let y = conv_forward(shape, &weights, &zero_bias, &pad(&x, shape.cin, h, w), h, w);
        let mut gw = vec![0.0; shape.weight_len()];
        let mut gb = vec![0.0; shape.cout];
        let gx = conv_backward(
            shape,
            &weights,
            &pad(&x, shape.cin, h, w),
            &g,
            h,
            w,
            &mut gw,
            &mut gb,
            true,
        )
        .unwrap();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        // Output is linear in the weights too.
        let wdot: f64 = weights.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - wdot).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}
