//! The joint observation model.
//!
//! The unknown is the triple `s = [x1, x2, xf]` on a common clean grid. Both
//! source degradations and the fusion rule are stacked into one block operator
//!
//! ```text
//!       | A1    0    0 |          | A1†      0        0 |
//!   Â = | 0     A2   0 |     Â† = | 0        A2†      0 |
//!       | -W1  -W2   I |          | W1·A1†   W2·A2†   I |
//! ```
//!
//! with per-pixel diagonal weights and `W2 = 1 - W1`. `Â†` is applied
//! implicitly from the children's pseudoinverse appliers and never formed.
//!
//! `Â†` is always a {1,2}-inverse when each `Ai†` is, and the range-side
//! product `ÂÂ† = diag(A1A1†, A2A2†, I)` is symmetric whenever each `AiAi†`
//! is. The domain-side product `Â†Â` is symmetric only when every `Ai†Ai = I`;
//! for rank-deficient sources (downsampling) its lower-left block is
//! `W1(A1†A1 - I) ≠ 0`, so the fourth Moore–Penrose condition fails.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Dims, ImagePlane};
use crate::ops::{ConditionReport, DenseOperator, LinearDegradation};

/// The joint unknown `[x1, x2, xf]`, three planes on the clean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub x1: ImagePlane,
    pub x2: ImagePlane,
    pub xf: ImagePlane,
}

impl JointState {
    pub fn new(x1: ImagePlane, x2: ImagePlane, xf: ImagePlane) -> Result<Self> {
        x1.ensure_same_dims(&x2)?;
        x1.ensure_same_dims(&xf)?;
        Ok(Self { x1, x2, xf })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            x1: ImagePlane::zeros(dims),
            x2: ImagePlane::zeros(dims),
            xf: ImagePlane::zeros(dims),
        }
    }

    pub fn dims(&self) -> Dims {
        self.x1.dims()
    }

    pub fn blocks(&self) -> [&ImagePlane; 3] {
        [&self.x1, &self.x2, &self.xf]
    }

    pub fn blocks_mut(&mut self) -> [&mut ImagePlane; 3] {
        [&mut self.x1, &mut self.x2, &mut self.xf]
    }

    pub fn map_blocks(&self, mut f: impl FnMut(&ImagePlane) -> ImagePlane) -> Self {
        Self {
            x1: f(&self.x1),
            x2: f(&self.x2),
            xf: f(&self.xf),
        }
    }

    pub fn zip_blocks(
        &self,
        other: &JointState,
        f: impl Fn(&ImagePlane, &ImagePlane) -> ImagePlane,
    ) -> Self {
        Self {
            x1: f(&self.x1, &other.x1),
            x2: f(&self.x2, &other.x2),
            xf: f(&self.xf, &other.xf),
        }
    }

    pub fn add(&self, other: &JointState) -> Self {
        self.zip_blocks(other, ImagePlane::add)
    }

    pub fn sub(&self, other: &JointState) -> Self {
        self.zip_blocks(other, ImagePlane::sub)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map_blocks(|p| p.scale(k))
    }

    pub fn axpy(&mut self, k: f64, other: &JointState) {
        self.x1.axpy(k, &other.x1);
        self.x2.axpy(k, &other.x2);
        self.xf.axpy(k, &other.xf);
    }

    pub fn dot(&self, other: &JointState) -> f64 {
        self.x1.dot(&other.x1) + self.x2.dot(&other.x2) + self.xf.dot(&other.xf)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    pub fn max_abs_diff(&self, other: &JointState) -> f64 {
        self.x1
            .max_abs_diff(&other.x1)
            .max(self.x2.max_abs_diff(&other.x2))
            .max(self.xf.max_abs_diff(&other.xf))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.is_finite())
    }

    pub fn bit_eq(&self, other: &JointState) -> bool {
        self.blocks().iter().zip(other.blocks()).all(|(a, b)| {
            a.dims() == b.dims()
                && a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }

    /// `[x1; x2; xf]`, each block row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.dims().len());
        for b in self.blocks() {
            v.extend_from_slice(b.data());
        }
        v
    }

    pub fn from_flat(dims: Dims, flat: &[f64]) -> Result<Self> {
        let n = dims.len();
        if flat.len() != 3 * n {
            return Err(Error::InvalidArgument(alloc::format!(
                "joint state on {dims} needs {} values, got {}",
                3 * n,
                flat.len()
            )));
        }
        let plane =
            |k: usize| ImagePlane::new(dims.height, dims.width, flat[k * n..(k + 1) * n].to_vec());
        Ok(Self {
            x1: plane(0)?,
            x2: plane(1)?,
            xf: plane(2)?,
        })
    }
}

/// A vector in the joint observation space `[y1, y2, y3]`.
///
/// Blocks keep their native sizes; `y1`, `y2` live on the degraded grids and
/// `y3` on the clean grid. For the measured data `y3` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub y1: ImagePlane,
    pub y2: ImagePlane,
    pub y3: ImagePlane,
}

impl JointObservation {
    /// Measured observations with the zero fusion block.
    pub fn from_sources(y1: ImagePlane, y2: ImagePlane, clean_dims: Dims) -> Self {
        Self {
            y1,
            y2,
            y3: ImagePlane::zeros(clean_dims),
        }
    }

    pub fn sub(&self, other: &JointObservation) -> Self {
        Self {
            y1: self.y1.sub(&other.y1),
            y2: self.y2.sub(&other.y2),
            y3: self.y3.sub(&other.y3),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            y1: self.y1.scale(k),
            y2: self.y2.scale(k),
            y3: self.y3.scale(k),
        }
    }

    pub fn axpy(&mut self, k: f64, other: &JointObservation) {
        self.y1.axpy(k, &other.y1);
        self.y2.axpy(k, &other.y2);
        self.y3.axpy(k, &other.y3);
    }

    pub fn dot(&self, other: &JointObservation) -> f64 {
        self.y1.dot(&other.y1) + self.y2.dot(&other.y2) + self.y3.dot(&other.y3)
    }

    pub fn max_abs(&self) -> f64 {
        self.y1
            .max_abs()
            .max(self.y2.max_abs())
            .max(self.y3.max_abs())
    }

    pub fn len(&self) -> usize {
        self.y1.len() + self.y2.len() + self.y3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.y1.data());
        v.extend_from_slice(self.y2.data());
        v.extend_from_slice(self.y3.data());
        v
    }

    fn from_flat(d1: Dims, d2: Dims, d3: Dims, flat: &[f64]) -> Result<Self> {
        let (n1, n2) = (d1.len(), d2.len());
        Ok(Self {
            y1: ImagePlane::new(d1.height, d1.width, flat[..n1].to_vec())?,
            y2: ImagePlane::new(d2.height, d2.width, flat[n1..n1 + n2].to_vec())?,
            y3: ImagePlane::new(d3.height, d3.width, flat[n1 + n2..].to_vec())?,
        })
    }
}

/// The block operator `Â` for fixed degradations and fusion weights.
#[derive(Debug, Clone)]
pub struct JointOperator {
    a1: LinearDegradation,
    a2: LinearDegradation,
    w1: ImagePlane,
}

impl JointOperator {
    /// `w1` is clamped to `[0, 1]`; `W2` is always read as `1 - W1`.
    pub fn new(a1: LinearDegradation, a2: LinearDegradation, w1: &ImagePlane) -> Result<Self> {
        let dims = a1.in_dims();
        if a2.in_dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: a2.in_dims(),
            });
        }
        w1.ensure_dims(dims)?;
        if !w1.is_finite() {
            return Err(Error::InvalidArgument(
                "fusion weights must be finite".into(),
            ));
        }
        Ok(Self {
            a1,
            a2,
            w1: w1.clamped(0.0, 1.0),
        })
    }

    pub fn with_constant_weight(
        a1: LinearDegradation,
        a2: LinearDegradation,
        w1: f64,
    ) -> Result<Self> {
        let w = ImagePlane::filled(a1.in_dims(), w1);
        Self::new(a1, a2, &w)
    }

    pub fn a1(&self) -> &LinearDegradation {
        &self.a1
    }

    pub fn a2(&self) -> &LinearDegradation {
        &self.a2
    }

    pub fn w1(&self) -> &ImagePlane {
        &self.w1
    }

    pub fn w2(&self) -> ImagePlane {
        self.w1.map(|w| 1.0 - w)
    }

    pub fn clean_dims(&self) -> Dims {
        self.a1.in_dims()
    }

    /// `W1 ⊙ u + W2 ⊙ v` with `W2 = 1 - W1`.
    pub fn blend(&self, u: &ImagePlane, v: &ImagePlane) -> ImagePlane {
        let w1 = self.w1.data();
        let data = u
            .data()
            .iter()
            .zip(v.data())
            .zip(w1)
            .map(|((&a, &b), &w)| {
                let w2 = 1.0 - w;
                debug_assert!((w + w2 - 1.0).abs() <= f64::EPSILON);
                w * a + w2 * b
            })
            .collect();
        ImagePlane::new(u.height(), u.width(), data).expect("blend preserves dims")
    }

    fn check_state(&self, s: &JointState) -> Result<()> {
        let d = self.clean_dims();
        s.x1.ensure_dims(d)?;
        s.x2.ensure_dims(d)?;
        s.xf.ensure_dims(d)
    }

    fn check_observation(&self, o: &JointObservation) -> Result<()> {
        o.y1.ensure_dims(self.a1.out_dims())?;
        o.y2.ensure_dims(self.a2.out_dims())?;
        o.y3.ensure_dims(self.clean_dims())
    }

    /// `Â s = [A1 x1; A2 x2; xf - W1 x1 - W2 x2]`.
    pub fn apply(&self, s: &JointState) -> Result<JointObservation> {
        self.check_state(s)?;
        Ok(JointObservation {
            y1: self.a1.apply(&s.x1)?,
            y2: self.a2.apply(&s.x2)?,
            y3: s.xf.sub(&self.blend(&s.x1, &s.x2)),
        })
    }

    /// `Â† o = [A1† y1; A2† y2; W1 A1† y1 + W2 A2† y2 + y3]`.
    pub fn apply_pinv(&self, o: &JointObservation) -> Result<JointState> {
        self.check_observation(o)?;
        let x1 = self.a1.apply_pinv(&o.y1)?;
        let x2 = self.a2.apply_pinv(&o.y2)?;
        let xf = self.blend(&x1, &x2).add(&o.y3);
        Ok(JointState { x1, x2, xf })
    }

    /// `Âᵀ o = [A1ᵀ y1 - W1 y3; A2ᵀ y2 - W2 y3; y3]`.
    pub fn apply_transpose(&self, o: &JointObservation) -> Result<JointState> {
        self.check_observation(o)?;
        let w2 = self.w2();
        Ok(JointState {
            x1: self.a1.apply_transpose(&o.y1)?.sub(&self.w1.mul(&o.y3)),
            x2: self.a2.apply_transpose(&o.y2)?.sub(&w2.mul(&o.y3)),
            xf: o.y3.clone(),
        })
    }

    /// `(Â†)ᵀ s = [A1†ᵀ(x1 + W1 xf); A2†ᵀ(x2 + W2 xf); xf]`.
    pub fn apply_pinv_transpose(&self, s: &JointState) -> Result<JointObservation> {
        self.check_state(s)?;
        let w2 = self.w2();
        Ok(JointObservation {
            y1: self
                .a1
                .apply_pinv_transpose(&s.x1.add(&self.w1.mul(&s.xf)))?,
            y2: self.a2.apply_pinv_transpose(&s.x2.add(&w2.mul(&s.xf)))?,
            y3: s.xf.clone(),
        })
    }

    /// Dense `Â`, rows ordered `[y1; y2; y3]`, columns `[x1; x2; xf]`.
    pub fn materialize(&self) -> Result<DenseOperator> {
        let d = self.clean_dims();
        let (n1, n2) = (self.a1.out_dims().len(), self.a2.out_dims().len());
        self.materialize_map(3 * d.len(), n1 + n2 + d.len(), |flat| {
            Ok(self.apply(&JointState::from_flat(d, flat)?)?.flatten())
        })
    }

    /// Dense `Â†` from the implicit applier.
    pub fn materialize_pinv(&self) -> Result<DenseOperator> {
        let d = self.clean_dims();
        let (d1, d2) = (self.a1.out_dims(), self.a2.out_dims());
        self.materialize_map(d1.len() + d2.len() + d.len(), 3 * d.len(), |flat| {
            let o = JointObservation::from_flat(d1, d2, d, flat)?;
            Ok(self.apply_pinv(&o)?.flatten())
        })
    }

    fn materialize_map(
        &self,
        cols: usize,
        rows: usize,
        mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<DenseOperator> {
        let cap = crate::ops::dense::MATERIALIZE_CAP;
        let per_block = self.clean_dims().len();
        if per_block > cap {
            return Err(Error::SizeCap {
                pixels: per_block,
                cap,
            });
        }
        let mut m = DenseOperator::zeros(rows, cols);
        let mut e = alloc::vec![0.0; cols];
        for j in 0..cols {
            e[j] = 1.0;
            let col = f(&e)?;
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }
}

/// Scalar attenuation `s_t` of the correction term.
///
/// `s_t = √(1-ᾱ_t) / (√(1-ᾱ_t) + σ_y)`, exactly 1 for noise-free observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionScale {
    sigma_y: f64,
    factor: f64,
}

impl CorrectionScale {
    /// Full projection, as for noise-free observations.
    pub const fn exact() -> Self {
        Self {
            sigma_y: 0.0,
            factor: 1.0,
        }
    }

    pub fn for_step(alpha_bar_t: f64, sigma_y: f64) -> Result<Self> {
        if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "observation noise must be non-negative, got {sigma_y}"
            )));
        }
        if sigma_y == 0.0 {
            return Ok(Self::exact());
        }
        let root = libm::sqrt((1.0 - alpha_bar_t).max(0.0));
        Ok(Self {
            sigma_y,
            factor: root / (root + sigma_y),
        })
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

/// The correction `Â†(Â est - obs)`, with the fusion block reusing the data-block results.
pub fn correction_term(
    est: &JointState,
    j: &JointOperator,
    obs: &JointObservation,
) -> Result<JointState> {
    let residual = j.apply(est)?.sub(obs);
    j.apply_pinv(&residual)
}

/// Noise-free projection `est - Â†(Â est - obs)`.
pub fn project(est: &JointState, j: &JointOperator, obs: &JointObservation) -> Result<JointState> {
    let delta = correction_term(est, j, obs)?;
    Ok(est.sub(&delta))
}

/// Scaled correction `est - s_t Â†(Â est - obs)`.
pub fn correct(
    est: &JointState,
    j: &JointOperator,
    obs: &JointObservation,
    scale: CorrectionScale,
) -> Result<JointState> {
    let delta = correction_term(est, j, obs)?;
    let s = scale.factor();
    Ok(est.zip_blocks(&delta, |e, d| e.zip_map(d, |a, b| a - s * b)))
}

pub const CG_DEFAULT_TOL: f64 = 1e-8;
pub const CG_DEFAULT_MAX_ITER: usize = 500;

/// Orthogonal projection of `est` onto `{z : Â z = obs}`.
///
/// Solves `ÂÂᵀ μ = Â est - obs` by Jacobi-preconditioned conjugate gradients
/// and returns `est - Âᵀ μ`. The normal-equation residual equals `Â z - obs`,
/// so convergence is judged on the constraint violation directly.
pub fn cg_project(
    est: &JointState,
    j: &JointOperator,
    obs: &JointObservation,
    tol: f64,
    max_iter: usize,
) -> Result<JointState> {
    let b = j.apply(est)?.sub(obs);
    // diag(ÂÂᵀ): constant row norms for the data blocks, 1 + w1² + w2² for the fusion rows.
    let c1 = 1.0 / j.a1().row_norm_sq();
    let c2 = 1.0 / j.a2().row_norm_sq();
    let c3 = j.w1().map(|w| 1.0 / (1.0 + w * w + (1.0 - w) * (1.0 - w)));
    let precondition = |r: &JointObservation| JointObservation {
        y1: r.y1.scale(c1),
        y2: r.y2.scale(c2),
        y3: r.y3.mul(&c3),
    };
    let normal =
        |p: &JointObservation| -> Result<JointObservation> { j.apply(&j.apply_transpose(p)?) };

    let mut mu = b.scale(0.0);
    let mut r = b.clone();
    let mut iterations = 0;
    'restart: loop {
        if r.max_abs() <= tol {
            break;
        }
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        while iterations < max_iter {
            iterations += 1;
            let q = normal(&p)?;
            let pq = p.dot(&q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            mu.axpy(alpha, &p);
            r.axpy(-alpha, &q);
            if r.max_abs() <= tol {
                // Confirm against the true residual before accepting.
                r = b.sub(&normal(&mu)?);
                if r.max_abs() <= tol {
                    break 'restart;
                }
                continue 'restart;
            }
            z = precondition(&r);
            let rz_next = r.dot(&z);
            let beta = rz_next / rz;
            rz = rz_next;
            let mut next = z.clone();
            next.axpy(beta, &p);
            p = next;
        }
        return Err(Error::NonConvergence {
            solver: "conjugate gradient",
            iterations,
            residual: b.sub(&normal(&mu)?).max_abs(),
        });
    }
    Ok(est.sub(&j.apply_transpose(&mu)?))
}

/// Dense Moore–Penrose condition check of `(Â, Â†)`.
pub fn check_mp_conditions(j: &JointOperator, tol: f64) -> Result<ConditionReport> {
    let a = j.materialize()?;
    let p = j.materialize_pinv()?;
    Ok(ConditionReport::evaluate(&a, &p, tol))
}
