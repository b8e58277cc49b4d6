//! Dense real matrices and the iterative kernels used everywhere else:
//! products, Hadamard products, Frobenius norms, power-iteration spectral
//! norms and top singular triplets, and stable-rank ratios.
//!
//! Everything is row-major `f64`. Graphs in this toolkit top out around a
//! couple thousand nodes, so dense storage is the right trade.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
#[cfg_attr(test, allow(unused_imports))]
use crate::math::F64Ext;
use crate::rng::SeedTree;

/// Default relative tolerance for the iterative spectral kernels. Far
/// below every tolerance asserted by callers and tests.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget for power iteration.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, validating shape and
    /// finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row_out = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let row_b = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in row_out.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `self^T * v`.
    pub fn matvec_transposed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "matvec_transposed: {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let a = v[i];
            if a == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &b) in out.iter_mut().zip(row) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "entrywise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Column means: `(1/n) 1_n^T M`, the pooling readout's left factor.
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Largest singular value via power iteration on `M^T M`, with the
    /// crate-default tolerance and iteration budget.
    pub fn spectral_norm_default(&self) -> f64 {
        // The default budget only runs out on adversarially clustered
        // spectra; even then the last iterate is a usable lower estimate.
        match spectral_norm(self, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(Error::NoConvergence { last, .. }) => last,
            Err(_) => 0.0,
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// One application of `M^T M` to `v`, returning (`M v`, `M^T M v`).
fn gram_apply(m: &DenseMatrix, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mv = m.matvec(v).expect("gram_apply shape");
    let mtmv = m.matvec_transposed(&mv).expect("gram_apply shape");
    (mv, mtmv)
}

struct PowerResult {
    sigma: f64,
    v: Vec<f64>,
    residual: f64,
    converged: bool,
}

/// Power iteration for the top eigenpair of `M^T M`, from a given start.
fn power_iterate(m: &DenseMatrix, start: Vec<f64>, tol: f64, max_iter: usize) -> PowerResult {
    let mut v = start;
    normalize(&mut v);
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let (mv, mut z) = gram_apply(m, &v);
        let mv_norm = norm2(&mv);
        lambda = mv_norm * mv_norm; // Rayleigh quotient of v (unit) on M^T M
        if lambda == 0.0 {
            // v is in the null space; caller decides whether to perturb.
            return PowerResult {
                sigma: 0.0,
                v,
                residual: 0.0,
                converged: true,
            };
        }
        // Residual of the eigenproblem: || M^T M v - lambda v ||.
        let mut r2 = 0.0;
        for (zi, vi) in z.iter().zip(&v) {
            let d = zi - lambda * vi;
            r2 += d * d;
        }
        residual = r2.sqrt();
        if residual <= tol * lambda {
            normalize(&mut z);
            return PowerResult {
                sigma: lambda.sqrt(),
                v: z,
                residual,
                converged: true,
            };
        }
        normalize(&mut z);
        v = z;
    }
    PowerResult {
        sigma: lambda.sqrt(),
        v,
        residual,
        converged: false,
    }
}

fn seeded_unit(len: usize, salt: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(0x5EED_0F_9A11).stream("power-iteration-restart", salt);
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut v);
    v
}

/// Largest singular value of `M`.
///
/// Power iteration on `M^T M` from the deterministic all-ones start; if
/// the start turns out orthogonal to the top singular space (detected by
/// a vanishing image or by a perturbed restart finding a larger value),
/// a seeded unit perturbation is mixed in. Returns 0 for the zero matrix.
pub fn spectral_norm(m: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must lie in (0, 1), got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    Ok(top_pair(m, tol, max_iter)?.0)
}

/// Shared driver: top singular value and its right singular vector.
fn top_pair(m: &DenseMatrix, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>)> {
    if m.is_zero() {
        let mut v = vec![0.0; m.cols];
        v[0] = 1.0;
        return Ok((0.0, v));
    }
    let ones = vec![1.0; m.cols];
    let mut best = power_iterate(m, ones, tol, max_iter);
    // The all-ones start can be orthogonal to the top singular space.
    // One perturbed restart detects that: if it converges to something
    // larger, keep it.
    let mut perturbed: Vec<f64> = best.v.clone();
    let q = seeded_unit(m.cols, m.cols as u64);
    for (p, qi) in perturbed.iter_mut().zip(&q) {
        *p += 0.25 * qi;
    }
    let second = power_iterate(m, perturbed, tol, max_iter);
    if second.sigma > best.sigma * (1.0 + tol) || (best.sigma == 0.0 && second.sigma > 0.0) {
        best = second;
    }
    if !best.converged {
        return Err(Error::NoConvergence {
            last: best.sigma,
            residual: best.residual,
        });
    }
    Ok((best.sigma, best.v))
}

/// Top singular triplet `(sigma, u, v)` of `M`, with `sigma * u * v^T`
/// the best rank-1 approximation.
///
/// Sign convention: the first nonzero entry of `u` is non-negative. When
/// the top singular space is degenerate (relative gap below `tol`) the
/// result is still deterministic but carries `degenerate = true`.
#[derive(Debug, Clone)]
pub struct TopTriplet {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub degenerate: bool,
}

pub fn top_singular_triplet(m: &DenseMatrix, tol: f64) -> Result<TopTriplet> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must lie in (0, 1), got {tol}"
        )));
    }
    let (sigma, v) = top_pair(m, tol, DEFAULT_MAX_ITER)?;
    if sigma == 0.0 {
        let mut u = vec![0.0; m.rows];
        u[0] = 1.0;
        let mut vv = vec![0.0; m.cols];
        vv[0] = 1.0;
        return Ok(TopTriplet {
            sigma: 0.0,
            u,
            v: vv,
            degenerate: true,
        });
    }
    let mut u = m.matvec(&v).expect("shape");
    let un = normalize(&mut u);
    debug_assert!(un > 0.0);

    // Deflated power iteration estimates the second singular value to
    // detect a degenerate (or near-degenerate) top space.
    let lambda1 = sigma * sigma;
    let mut w = seeded_unit(m.cols, 0x00D2);
    let mut sigma2 = 0.0;
    for _ in 0..512 {
        // Project out v, apply M^T M, project again.
        let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= dot * vi;
        }
        if normalize(&mut w) == 0.0 {
            break;
        }
        let (_, mut z) = gram_apply(m, &w);
        let dot: f64 = z.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi -= dot * vi;
        }
        let lam: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
        sigma2 = lam.max(0.0).sqrt();
        let mut r2 = 0.0;
        for (zi, wi) in z.iter().zip(&w) {
            let d = zi - lam * wi;
            r2 += d * d;
        }
        if r2.sqrt() <= 1e-6 * lambda1 {
            w = z;
            normalize(&mut w);
            break;
        }
        w = z;
        normalize(&mut w);
    }
    let degenerate = sigma2 >= sigma * (1.0 - tol.max(1e-12));

    let mut u = u;
    let mut v = v;
    if let Some(first) = u.iter().find(|x| x.abs() > 1e-300) {
        if *first < 0.0 {
            for x in u.iter_mut() {
                *x = -*x;
            }
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
    Ok(TopTriplet {
        sigma,
        u,
        v,
        degenerate,
    })
}

/// Stable-rank ratio `||M||_F / ||M||_2`; 0 for the zero matrix.
pub fn stable_rank_ratio(m: &DenseMatrix) -> f64 {
    if m.is_zero() {
        return 0.0;
    }
    let fro = m.frobenius_norm();
    let spec = m.spectral_norm_default();
    if spec == 0.0 {
        0.0
    } else {
        fro / spec
    }
}
