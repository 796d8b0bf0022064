//! Few-step deterministic DDIM sampling with joint-observation correction.
//!
//! Each reverse step `t = T, …, 1`:
//!
//! 1. the denoiser predicts `ε` for the joint state and a fusion weight map `W1`;
//! 2. `x̂0 = x_t - √(1-ᾱ_t) ε` (optionally divided by `√ᾱ_t`);
//! 3. `x̄0 = x̂0 - s_t Â†(Â x̂0 - y)` with `Â` built from `W1`;
//! 4. `x_{t-1} = √ᾱ_{t-1} x̄0 + √(1-ᾱ_{t-1}) ε`.
//!
//! The fused image is the `xf` block of `x_0`, clamped to `[0, 1]`.

use alloc::vec::Vec;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::joint::{correct, CorrectionScale, JointObservation, JointOperator, JointState};
use crate::ops::LinearDegradation;
use crate::rng::{standard_normal_plane, SeededRng};

/// Cumulative signal levels `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_T > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// `alpha_bar[0]` must be 1 and the sequence strictly decreasing and positive.
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Schedule("need at least one step".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Schedule(alloc::format!(
                "alpha_bar[0] must be 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, pair) in alpha_bar.windows(2).enumerate() {
            if !(pair[1] < pair[0]) || !(pair[1] > 0.0) {
                return Err(Error::Schedule(alloc::format!(
                    "alpha_bar must decrease strictly inside (0, 1]: step {} has {}",
                    t + 1,
                    pair[1]
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `β_t = 1 - ᾱ_t / ᾱ_{t-1}` for `t ≥ 1`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

pub const DEFAULT_STEPS: usize = 3;
pub const DEFAULT_ALPHA_BAR_FIRST: f64 = 0.9;
pub const DEFAULT_ALPHA_BAR_LAST: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub steps: usize,
    pub alpha_bar_first: f64,
    pub alpha_bar_last: f64,
    /// Standard deviation of the observation noise; scales the correction.
    pub sigma_y: f64,
    /// Divide `x̂0` by `√ᾱ_t` as in textbook DDIM.
    pub ddim_normalize: bool,
    pub seed: u64,
    pub keep_trace: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            alpha_bar_first: DEFAULT_ALPHA_BAR_FIRST,
            alpha_bar_last: DEFAULT_ALPHA_BAR_LAST,
            sigma_y: 0.0,
            ddim_normalize: false,
            seed: 42,
            keep_trace: false,
        }
    }
}

/// Linear interpolation of `ᾱ` from `alpha_bar_first` at `t = 1` to `alpha_bar_last` at `t = T`.
pub fn make_schedule(cfg: &FusionConfig) -> Result<DiffusionSchedule> {
    let (first, last) = (cfg.alpha_bar_first, cfg.alpha_bar_last);
    if cfg.steps == 0 {
        return Err(Error::Schedule("T must be positive".into()));
    }
    if !(0.0 < last && last < first && first < 1.0) {
        return Err(Error::Schedule(alloc::format!(
            "need 0 < alpha_bar_last < alpha_bar_first < 1, got {first} -> {last}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(cfg.steps + 1);
    alpha_bar.push(1.0);
    if cfg.steps == 1 {
        alpha_bar.push(last);
    } else {
        let span = (cfg.steps - 1) as f64;
        for t in 1..=cfg.steps {
            let frac = (t - 1) as f64 / span;
            alpha_bar.push(first + (last - first) * frac);
        }
    }
    DiffusionSchedule::new(alpha_bar)
}

/// `x_t = √ᾱ_t x0 + √(1-ᾱ_t) ε` with independent draws per block.
pub fn forward_noise(
    x0: &JointState,
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
) -> Result<JointState> {
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange {
            t,
            max: sched.steps(),
        });
    }
    let ab = sched.alpha_bar(t);
    let (signal, noise) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    let dims = x0.dims();
    Ok(x0.map_blocks(|b| {
        let z = standard_normal_plane(dims, rng);
        b.zip_map(&z, |x, e| signal * x + noise * e)
    }))
}

/// One DDIM reverse step, split around the external correction.
#[derive(Debug, Clone)]
pub struct DdimStep {
    pub x0_hat: JointState,
    eps: JointState,
    signal_prev: f64,
    noise_prev: f64,
}

impl DdimStep {
    /// `x_{t-1} = √ᾱ_{t-1} x̄0 + √(1-ᾱ_{t-1}) ε`.
    pub fn step(&self, corrected: &JointState) -> JointState {
        let (a, b) = (self.signal_prev, self.noise_prev);
        corrected.zip_blocks(&self.eps, |x, e| x.zip_map(e, |xv, ev| a * xv + b * ev))
    }
}

/// `x̂0 = x_t - √(1-ᾱ_t) ε`, divided by `√ᾱ_t` when `normalize` is set.
pub fn ddim_step(
    x_t: &JointState,
    eps: &JointState,
    t: usize,
    sched: &DiffusionSchedule,
    normalize: bool,
) -> Result<DdimStep> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let noise = libm::sqrt(1.0 - ab);
    let x0_hat = if normalize {
        let inv = 1.0 / libm::sqrt(ab);
        x_t.zip_blocks(eps, |x, e| x.zip_map(e, |xv, ev| (xv - noise * ev) * inv))
    } else {
        x_t.zip_blocks(eps, |x, e| x.zip_map(e, |xv, ev| xv - noise * ev))
    };
    let ab_prev = sched.alpha_bar(t - 1);
    Ok(DdimStep {
        x0_hat,
        eps: eps.clone(),
        signal_prev: libm::sqrt(ab_prev),
        noise_prev: libm::sqrt(1.0 - ab_prev),
    })
}

/// Diagnostics for one reverse step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub w1: ImagePlane,
    pub x0_hat: JointState,
    /// State right after the joint correction.
    pub corrected: JointState,
    /// `x_{t-1}`.
    pub next: JointState,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub fused: ImagePlane,
    pub final_state: JointState,
    pub trace: Vec<StepRecord>,
}

/// Pseudoinverse restorations and their average: `[A1† y1, A2† y2, (A1† y1 + A2† y2)/2]`.
pub fn initial_state(
    y1: &ImagePlane,
    y2: &ImagePlane,
    a1: &LinearDegradation,
    a2: &LinearDegradation,
) -> Result<JointState> {
    let x1 = a1.apply_pinv(y1)?;
    let x2 = a2.apply_pinv(y2)?;
    let xf = x1.zip_map(&x2, |a, b| 0.5 * (a + b));
    JointState::new(x1, x2, xf)
}

/// Fuse two degraded observations.
pub fn run_fusion<D: Denoiser + ?Sized>(
    y1: &ImagePlane,
    y2: &ImagePlane,
    a1: &LinearDegradation,
    a2: &LinearDegradation,
    denoiser: &D,
    cfg: &FusionConfig,
) -> Result<FusionOutput> {
    if a1.in_dims() != a2.in_dims() {
        return Err(Error::DimensionMismatch {
            expected: a1.in_dims(),
            found: a2.in_dims(),
        });
    }
    let sched = make_schedule(cfg)?;
    let clean_dims = a1.in_dims();
    let mut rng = SeededRng::new(cfg.seed);
    let init = initial_state(y1, y2, a1, a2)?;
    let obs = JointObservation::from_sources(y1.clone(), y2.clone(), clean_dims);

    let mut x = forward_noise(&init, sched.steps(), &sched, &mut rng)?;
    let mut trace = Vec::new();
    for t in (1..=sched.steps()).rev() {
        let out = denoiser.predict(&x, t, &sched)?;
        let joint = JointOperator::new(a1.clone(), a2.clone(), &out.w1)?;
        let step = ddim_step(&x, &out.eps, t, &sched, cfg.ddim_normalize)?;
        let scale = CorrectionScale::for_step(sched.alpha_bar(t), cfg.sigma_y)?;
        let corrected = correct(&step.x0_hat, &joint, &obs, scale)?;
        let next = step.step(&corrected);
        if !next.is_finite() {
            return Err(Error::NonFiniteState { t });
        }
        if cfg.keep_trace {
            trace.push(StepRecord {
                t,
                w1: joint.w1().clone(),
                x0_hat: step.x0_hat,
                corrected,
                next: next.clone(),
            });
        }
        x = next;
    }
    Ok(FusionOutput {
        fused: x.xf.clamped(0.0, 1.0),
        final_state: x,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserOutput, OracleDenoiser};
    use crate::image::Dims;
    use alloc::vec;

    fn scalar_state(v: f64) -> JointState {
        let p = ImagePlane::new(1, 1, vec![v]).unwrap();
        JointState::new(p.clone(), p.clone(), p).unwrap()
    }

    #[test]
    fn default_schedule() {
        let s = make_schedule(&FusionConfig::default()).unwrap();
        let expect = [1.0, 0.9, 0.6, 0.3];
        for (a, b) in s.alpha_bars().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s.beta(2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_step_schedule_uses_last_value() {
        let cfg = FusionConfig {
            steps: 1,
            ..Default::default()
        };
        assert_eq!(make_schedule(&cfg).unwrap().alpha_bars(), &[1.0, 0.3]);
    }

    #[test]
    fn schedule_rejects_bad_endpoints() {
        for (first, last) in [(0.3, 0.9), (1.0, 0.3), (0.9, 0.0), (0.5, 0.5)] {
            let cfg = FusionConfig {
                alpha_bar_first: first,
                alpha_bar_last: last,
                ..Default::default()
            };
            assert!(make_schedule(&cfg).is_err(), "{first} -> {last}");
        }
        assert!(DiffusionSchedule::new(vec![0.9, 0.5]).is_err());
    }

    #[test]
    fn ddim_arithmetic() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.64, 0.25]).unwrap();
        let step = ddim_step(&scalar_state(1.0), &scalar_state(0.5), 2, &sched, false).unwrap();
        let x0 = step.x0_hat.x1.data()[0];
        assert!((x0 - (1.0 - libm::sqrt(0.75) * 0.5)).abs() < 1e-15);
        assert!((x0 - 0.566_987).abs() < 1e-6);
        let prev = step.step(&scalar_state(x0)).x1.data()[0];
        assert!((prev - (0.8 * x0 + 0.6 * 0.5)).abs() < 1e-15);
        assert!((prev - 0.753_59).abs() < 1e-5);
    }

    #[test]
    fn ddim_with_zero_noise() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.64, 0.25]).unwrap();
        let step = ddim_step(&scalar_state(0.7), &scalar_state(0.0), 2, &sched, false).unwrap();
        assert_eq!(step.x0_hat, scalar_state(0.7));
        assert!((step.step(&step.x0_hat).x1.data()[0] - 0.8 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn normalized_ddim_divides_by_signal() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.64, 0.25]).unwrap();
        let step = ddim_step(&scalar_state(1.0), &scalar_state(0.5), 2, &sched, true).unwrap();
        let expect = (1.0 - libm::sqrt(0.75) * 0.5) / 0.5;
        assert!((step.x0_hat.x1.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn ddim_rejects_bad_timestep() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.5]).unwrap();
        assert!(ddim_step(&scalar_state(1.0), &scalar_state(0.0), 0, &sched, false).is_err());
        assert!(ddim_step(&scalar_state(1.0), &scalar_state(0.0), 2, &sched, false).is_err());
    }

    #[test]
    fn forward_noise_at_t0_is_identity() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.5]).unwrap();
        let x = scalar_state(0.3);
        let mut rng = SeededRng::new(1);
        assert_eq!(forward_noise(&x, 0, &sched, &mut rng).unwrap(), x);
        assert!(forward_noise(&x, 2, &sched, &mut rng).is_err());
    }

    #[test]
    fn forward_noise_moments() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.81]).unwrap();
        let d = Dims::new(64, 64);
        let x0 = JointState::new(
            ImagePlane::filled(d, 2.0),
            ImagePlane::filled(d, 2.0),
            ImagePlane::filled(d, 2.0),
        )
        .unwrap();
        let xt = forward_noise(&x0, 1, &sched, &mut SeededRng::new(5)).unwrap();
        let n = d.len() as f64;
        let sd = libm::sqrt(0.19);
        for b in xt.blocks() {
            let mean = b.mean();
            let var = b
                .data()
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            assert!((mean - 1.8).abs() <= 3.0 * sd / libm::sqrt(n));
            assert!((libm::sqrt(var) - sd).abs() <= 3.0 * sd / libm::sqrt(2.0 * n));
        }
    }

    struct ZeroDenoiser;

    impl Denoiser for ZeroDenoiser {
        fn predict(
            &self,
            x_t: &JointState,
            _t: usize,
            _s: &DiffusionSchedule,
        ) -> Result<DenoiserOutput> {
            Ok(DenoiserOutput {
                eps: JointState::zeros(x_t.dims()),
                w1: ImagePlane::filled(x_t.dims(), 0.5),
            })
        }
    }

    #[test]
    fn zero_inputs_fuse_to_zero() {
        let d = Dims::new(6, 6);
        let id = LinearDegradation::identity(d);
        let z = ImagePlane::zeros(d);
        // forward noising injects noise, but the correction pins x1, x2 to the zero
        // observations and xf to their blend; with ε = 0 the final step keeps that.
        let out = run_fusion(&z, &z, &id, &id, &ZeroDenoiser, &FusionConfig::default()).unwrap();
        assert_eq!(out.fused.max_abs(), 0.0);
    }

    #[test]
    fn oracle_sampler_reproduces_weighted_blend() {
        let d = Dims::new(8, 8);
        let mut rng = SeededRng::new(17);
        let x1 = ImagePlane::from_fn(d, |_, _| rng.uniform());
        let x2 = ImagePlane::from_fn(d, |_, _| rng.uniform());
        let clean = JointState::new(x1.clone(), x2.clone(), x1.clone()).unwrap();
        let id = LinearDegradation::identity(d);
        let oracle = OracleDenoiser::new(clean, 0.25).unwrap();
        let cfg = FusionConfig {
            keep_trace: true,
            ..Default::default()
        };
        let out = run_fusion(&x1, &x2, &id, &id, &oracle, &cfg).unwrap();
        let expect = x1.zip_map(&x2, |a, b| 0.25 * a + 0.75 * b);
        assert!(out.fused.max_abs_diff(&expect) <= 1e-6);
        assert_eq!(out.trace.len(), 3);
        for rec in &out.trace {
            let blend = rec
                .corrected
                .x1
                .zip_map(&rec.corrected.x2, |a, b| 0.25 * a + 0.75 * b);
            assert!(rec.corrected.xf.max_abs_diff(&blend) <= 1e-10);
        }
    }

    #[test]
    fn fusion_is_deterministic() {
        let d = Dims::new(8, 8);
        let mut rng = SeededRng::new(3);
        let y = ImagePlane::from_fn(d, |_, _| rng.uniform());
        let id = LinearDegradation::identity(d);
        let clean = JointState::new(y.clone(), y.clone(), y.clone()).unwrap();
        let oracle = OracleDenoiser::new(clean, 0.5).unwrap();
        let a = run_fusion(&y, &y, &id, &id, &oracle, &FusionConfig::default()).unwrap();
        let b = run_fusion(&y, &y, &id, &id, &oracle, &FusionConfig::default()).unwrap();
        assert!(a.final_state.bit_eq(&b.final_state));
    }
}
