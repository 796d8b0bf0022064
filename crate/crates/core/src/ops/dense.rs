//! Dense matrices for verifying matrix-free operators on small grids.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::degradation::LinearDegradation;
use crate::error::{Error, Result};
use crate::image::{Dims, ImagePlane};

/// Largest pixel count (per side of the map) that may be materialized.
pub const MATERIALIZE_CAP: usize = 4096;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::InvalidArgument(alloc::format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Build column by column from a linear map on planes.
    pub fn from_columns(
        in_dims: Dims,
        out_len: usize,
        mut column: impl FnMut(&ImagePlane) -> Result<ImagePlane>,
    ) -> Result<Self> {
        check_cap(in_dims.len())?;
        check_cap(out_len)?;
        let mut m = Self::zeros(out_len, in_dims.len());
        for j in 0..in_dims.len() {
            let col = column(&ImagePlane::unit(in_dims, j))?;
            for (i, &v) in col.data().iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseOperator) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.entries[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.entries[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = &other.entries[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| {
                self.entries[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Largest absolute entrywise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseOperator) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch"
        );
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Deviation from symmetry, `max |M - Mᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "asymmetry of a non-square matrix");
        let mut m: f64 = 0.0;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                m = m.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        m
    }

    /// Copy `block` into this matrix with its top-left corner at `(r0, c0)`.
    pub fn put_block(&mut self, r0: usize, c0: usize, block: &DenseOperator) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self.set(r0 + r, c0 + c, block.get(r, c));
            }
        }
    }
}

fn check_cap(pixels: usize) -> Result<()> {
    if pixels > MATERIALIZE_CAP {
        return Err(Error::SizeCap {
            pixels,
            cap: MATERIALIZE_CAP,
        });
    }
    Ok(())
}

/// Dense matrix of `A`; column `j` is `A e_j`.
pub fn materialize(op: &LinearDegradation) -> Result<DenseOperator> {
    DenseOperator::from_columns(op.in_dims(), op.out_dims().len(), |e| op.apply(e))
}

/// Dense matrix of the pseudoinverse applier `A†`.
pub fn materialize_pinv(op: &LinearDegradation) -> Result<DenseOperator> {
    DenseOperator::from_columns(op.out_dims(), op.in_dims().len(), |e| op.apply_pinv(e))
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Moore–Penrose pseudoinverse by one-sided Jacobi SVD.
///
/// Singular values at or below `tol * σ_max` are treated as zero.
pub fn svd_pinv(m: &DenseOperator, tol: f64) -> Result<DenseOperator> {
    check_cap(m.rows)?;
    check_cap(m.cols)?;
    if m.rows < m.cols {
        return Ok(svd_pinv(&m.transpose(), tol)?.transpose());
    }
    let (rows, cols) = (m.rows, m.cols);
    // Column-major working copies: u holds A V, v accumulates the rotations.
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| m.get(r, c)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    let mut converged = false;
    let mut last_off = 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        last_off = 0.0;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (up, uq) = (&u[p], &u[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for i in 0..rows {
                        a += up[i] * up[i];
                        b += uq[i] * uq[i];
                        g += up[i] * uq[i];
                    }
                    (a, b, g)
                };
                if gamma == 0.0 || gamma.abs() <= eps * libm::sqrt(alpha * beta) {
                    continue;
                }
                last_off = f64::max(last_off, gamma.abs() / libm::sqrt(alpha * beta));
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            solver: "jacobi svd",
            iterations: JACOBI_MAX_SWEEPS,
            residual: last_off,
        });
    }

    let sigma: Vec<f64> = u
        .iter()
        .map(|col| libm::sqrt(col.iter().map(|x| x * x).sum::<f64>()))
        .collect();
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = tol * sigma_max;
    // pinv = Σ_i v_i u_iᵀ / σ_i², with u_i = σ_i × (left singular vector).
    let mut pinv = DenseOperator::zeros(cols, rows);
    for i in 0..cols {
        if sigma[i] <= cutoff || sigma[i] == 0.0 {
            continue;
        }
        let inv = 1.0 / (sigma[i] * sigma[i]);
        for r in 0..cols {
            let vr = v[i][r] * inv;
            if vr == 0.0 {
                continue;
            }
            for c in 0..rows {
                pinv.entries[r * rows + c] += vr * u[i][c];
            }
        }
    }
    Ok(pinv)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Maximum deviations in the four Moore–Penrose conditions for a pair `(A, P)`:
/// `APA = A`, `PAP = P`, `(AP)ᵀ = AP`, `(PA)ᵀ = PA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub deviations: [f64; 4],
    pub tol: f64,
}

pub const CONDITION_LABELS: [&str; 4] =
    ["A P A = A", "P A P = P", "(A P)^T = A P", "(P A)^T = P A"];

impl ConditionReport {
    pub fn evaluate(a: &DenseOperator, p: &DenseOperator, tol: f64) -> Self {
        let ap = a.matmul(p);
        let pa = p.matmul(a);
        Self {
            deviations: [
                ap.matmul(a).max_abs_diff(a),
                pa.matmul(p).max_abs_diff(p),
                ap.asymmetry(),
                pa.asymmetry(),
            ],
            tol,
        }
    }

    /// Whether condition `i` (0-based) holds at the report tolerance.
    pub fn passes(&self, i: usize) -> bool {
        self.deviations[i] <= self.tol
    }

    pub fn all_pass(&self) -> bool {
        (0..4).all(|i| self.passes(i))
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, label) in CONDITION_LABELS.iter().enumerate() {
            writeln!(
                f,
                "({}) {:<16} max|dev| = {:>12.3e}  {}",
                i + 1,
                label,
                self.deviations[i],
                if self.passes(i) { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "tolerance {:e}", self.tol)
    }
}

/// Dense Moore–Penrose condition check of `A` against its pseudoinverse applier.
pub fn verify_operator(op: &LinearDegradation, tol: f64) -> Result<ConditionReport> {
    let a = materialize(op)?;
    let p = materialize_pinv(op)?;
    Ok(ConditionReport::evaluate(&a, &p, tol))
}
