//! Training through one corrected DDIM step.
//!
//! Each sample starts from the pseudoinverse initialization of a degraded pair, is
//! noised to a random step `t`, passed through the network, reduced to `x̂0`,
//! corrected against the joint observation and scored against the clean sources.
//! The correction is linear in `x̂0` and bilinear in `W1`, so its adjoint is applied
//! in closed form.

use alloc::vec;
use alloc::vec::Vec;

use super::loss::{loss_kinks, loss_terms, loss_with_grad, LossBreakdown, LossHyper};
use super::synth::synthetic_pair;
use super::tiny::{backward_into, forward_cached, TinyNetParams};
use super::AdamState;
use crate::error::{Error, Result};
use crate::image::{Dims, ImagePlane};
use crate::joint::{correction_term, CorrectionScale, JointObservation, JointOperator, JointState};
use crate::ops::LinearDegradation;
use crate::rng::{gaussian_noise, standard_normal_plane, SeededRng};
use crate::sampler::{ddim_step, initial_state, make_schedule, DiffusionSchedule, FusionConfig};

/// Clean sources and their degraded observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub clean1: ImagePlane,
    pub clean2: ImagePlane,
    pub y1: ImagePlane,
    pub y2: ImagePlane,
}

/// A labeled pair with the step and noise draw used for one unrolled evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub pair: LabeledPair,
    pub t: usize,
    pub noise: JointState,
}

/// Degraded pairs sharing one pair of operators.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub a1: LinearDegradation,
    pub a2: LinearDegradation,
    pub pairs: Vec<LabeledPair>,
}

impl TrainingSet {
    /// `count` procedural pairs: thermal through `a1`, visible through `a2`, each with
    /// additive Gaussian noise of standard deviation `sigma`.
    pub fn synthetic(
        count: usize,
        a1: LinearDegradation,
        a2: LinearDegradation,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if a1.in_dims() != a2.in_dims() {
            return Err(Error::DimensionMismatch {
                expected: a1.in_dims(),
                found: a2.in_dims(),
            });
        }
        let dims = a1.in_dims();
        let mut rng = SeededRng::new(seed);
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let scene = synthetic_pair(dims, &mut rng);
            let y1 = gaussian_noise(&a1.apply(&scene.thermal)?, sigma, &mut rng);
            let y2 = gaussian_noise(&a2.apply(&scene.visible)?, sigma, &mut rng);
            pairs.push(LabeledPair {
                clean1: scene.thermal,
                clean2: scene.visible,
                y1,
                y2,
            });
        }
        Ok(Self { a1, a2, pairs })
    }

    pub fn dims(&self) -> Dims {
        self.a1.in_dims()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Everything one unrolled step needs besides the parameters and the sample.
#[derive(Debug, Clone)]
pub struct Unroll {
    pub a1: LinearDegradation,
    pub a2: LinearDegradation,
    pub sched: DiffusionSchedule,
    pub sigma_y: f64,
    pub normalize: bool,
    pub hyper: LossHyper,
}

struct Forward {
    cache: super::tiny::ForwardCache,
    w1: ImagePlane,
    x0_hat: JointState,
    delta: JointState,
    corrected: JointState,
    scale: f64,
}

impl Unroll {
    pub fn new(
        a1: LinearDegradation,
        a2: LinearDegradation,
        fusion: &FusionConfig,
        hyper: LossHyper,
    ) -> Result<Self> {
        Ok(Self {
            a1,
            a2,
            sched: make_schedule(fusion)?,
            sigma_y: fusion.sigma_y,
            normalize: fusion.ddim_normalize,
            hyper,
        })
    }

    /// Draw a random step and noise for `pair`.
    pub fn sample(&self, pair: &LabeledPair, rng: &mut SeededRng) -> TrainingSample {
        let t = 1 + rng.below(self.sched.steps());
        let dims = self.a1.in_dims();
        let noise = JointState::new(
            standard_normal_plane(dims, rng),
            standard_normal_plane(dims, rng),
            standard_normal_plane(dims, rng),
        )
        .expect("planes share dims");
        TrainingSample {
            pair: pair.clone(),
            t,
            noise,
        }
    }

    fn forward(&self, p: &TinyNetParams, s: &TrainingSample) -> Result<Forward> {
        self.sched.check_step(s.t)?;
        let init = initial_state(&s.pair.y1, &s.pair.y2, &self.a1, &self.a2)?;
        let ab = self.sched.alpha_bar(s.t);
        let (signal, noise) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
        let x_t = init.zip_blocks(&s.noise, |x, e| {
            x.zip_map(e, |xv, ev| signal * xv + noise * ev)
        });

        let (out, cache) = forward_cached(p, &x_t, s.t, self.sched.steps());
        let step = ddim_step(&x_t, &out.eps, s.t, &self.sched, self.normalize)?;
        let joint = JointOperator::new(self.a1.clone(), self.a2.clone(), &out.w1)?;
        let obs =
            JointObservation::from_sources(s.pair.y1.clone(), s.pair.y2.clone(), self.a1.in_dims());
        let scale = CorrectionScale::for_step(ab, self.sigma_y)?;
        let delta = correction_term(&step.x0_hat, &joint, &obs)?;
        let sc = scale.factor();
        let corrected = step
            .x0_hat
            .zip_blocks(&delta, |e, d| e.zip_map(d, |a, b| a - sc * b));
        Ok(Forward {
            cache,
            w1: out.w1,
            x0_hat: step.x0_hat,
            delta,
            corrected,
            scale: sc,
        })
    }

    fn labels<'a>(s: &'a TrainingSample) -> (&'a ImagePlane, &'a ImagePlane) {
        (&s.pair.clean1, &s.pair.clean2)
    }

    pub fn loss(&self, p: &TinyNetParams, s: &TrainingSample) -> Result<LossBreakdown> {
        let f = self.forward(p, s)?;
        super::loss::loss_total(&f.corrected, Self::labels(s), &self.hyper)
    }

    /// Loss of one sample; its parameter gradient is added to `grad`.
    pub fn loss_and_grad(
        &self,
        p: &TinyNetParams,
        s: &TrainingSample,
        grad: &mut [f64],
    ) -> Result<LossBreakdown> {
        let f = self.forward(p, s)?;
        let (loss, g) = loss_with_grad(&f.corrected, Self::labels(s), &self.hyper)?;
        let sc = f.scale;
        let w1 = &f.w1;
        let w2 = w1.map(|v| 1.0 - v);

        // x̄i = x̂i - s·di,  x̄f = (1-s)·x̂f + s·(W1(x̂1-d1) + W2(x̂2-d2)),  di = Pi(Ai x̂i - yi)
        let gd1 = g.x1.zip_map(&g.xf.mul(w1), |a, b| -sc * (a + b));
        let gd2 = g.x2.zip_map(&g.xf.mul(&w2), |a, b| -sc * (a + b));
        let back1 = self
            .a1
            .apply_transpose(&self.a1.apply_pinv_transpose(&gd1)?)?;
        let back2 = self
            .a2
            .apply_transpose(&self.a2.apply_pinv_transpose(&gd2)?)?;
        let mut gx1 = g.x1.clone();
        gx1.axpy(sc, &g.xf.mul(w1));
        gx1.axpy(1.0, &back1);
        let mut gx2 = g.x2.clone();
        gx2.axpy(sc, &g.xf.mul(&w2));
        gx2.axpy(1.0, &back2);
        let gxf = g.xf.scale(1.0 - sc);

        let u1 = f.x0_hat.x1.sub(&f.delta.x1);
        let u2 = f.x0_hat.x2.sub(&f.delta.x2);
        let g_w1 = g.xf.zip_map(&u1.sub(&u2), |a, b| sc * a * b);

        let ab = self.sched.alpha_bar(s.t);
        let mut k = -libm::sqrt(1.0 - ab);
        if self.normalize {
            k /= libm::sqrt(ab);
        }
        let g_eps = JointState::new(gx1.scale(k), gx2.scale(k), gxf.scale(k))?;
        backward_into(p, &f.cache, &g_eps, &g_w1, grad);
        Ok(loss)
    }

    /// Loss, its per-pixel terms, and the sign pattern of every kink along the
    /// unrolled computation.
    ///
    /// The loss is smooth in the parameters on any region where the pattern is constant,
    /// which is what a finite-difference probe needs to know.
    pub fn probe(&self, p: &TinyNetParams, s: &TrainingSample) -> Result<LossProbe> {
        let f = self.forward(p, s)?;
        let loss = super::loss::loss_total(&f.corrected, Self::labels(s), &self.hyper)?;
        let terms = loss_terms(&f.corrected, Self::labels(s), &self.hyper)?;
        let mut signature: Vec<i8> = f.cache.relu_pattern().map(i8::from).collect();
        signature.extend(loss_kinks(&f.corrected, Self::labels(s), &self.hyper)?);
        Ok(LossProbe {
            loss,
            terms,
            signature,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossProbe {
    pub loss: LossBreakdown,
    pub terms: Vec<f64>,
    pub signature: Vec<i8>,
}

impl LossProbe {
    /// `self.loss.total - other.loss.total`, summed term by term.
    pub fn difference(&self, other: &LossProbe) -> f64 {
        self.terms
            .iter()
            .zip(&other.terms)
            .map(|(a, b)| a - b)
            .sum()
    }
}

/// Mean loss over `batch` and its exact parameter gradient.
pub fn tiny_backward(
    p: &TinyNetParams,
    batch: &[TrainingSample],
    unroll: &Unroll,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = vec![0.0; TinyNetParams::LEN];
    let mut total = 0.0;
    for s in batch {
        total += unroll.loss_and_grad(p, s, &mut grad)?.total;
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hyper: LossHyper,
    pub fusion: FusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch: 8,
            lr: super::DEFAULT_LEARNING_RATE,
            seed: 42,
            hyper: LossHyper::default(),
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: TinyNetParams,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

/// Train from the seeded initialization.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut rng = SeededRng::new(cfg.seed);
    let params = TinyNetParams::init(rng.next_u64());
    train_from(params, set, cfg, &mut rng)
}

/// Continue training `params`, drawing batches and noise from `rng`.
pub fn train_from(
    mut params: TinyNetParams,
    set: &TrainingSet,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutput> {
    if set.is_empty() || cfg.batch == 0 {
        return Err(Error::InvalidArgument(
            "training needs data and a positive batch size".into(),
        ));
    }
    let unroll = Unroll::new(set.a1.clone(), set.a2.clone(), &cfg.fusion, cfg.hyper)?;
    let mut adam = AdamState::new(TinyNetParams::LEN, cfg.lr);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<TrainingSample> = chunk
                .iter()
                .map(|&i| unroll.sample(&set.pairs[i], rng))
                .collect();
            let (loss, grad) = tiny_backward(&params, &batch, &unroll)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { step: losses.len() });
            }
            losses.push(loss);
            adam.update(params.values_mut(), &grad);
        }
    }
    Ok(TrainOutput { params, losses })
}

/// Trailing moving average over at most `window` values.
pub fn smoothed(curve: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    for i in 0..curve.len() {
        acc += curve[i];
        if i >= window {
            acc -= curve[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
