//! Dense complex linear algebra kernels.
//!
//! Everything here works on small-to-medium square matrices (the Fock-space
//! density matrices, dimension up to a few hundred). The sparse superoperator
//! lives in [`crate::liouvillian`].

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Eigenvalues in `[-NEGATIVE_CLIP, 0)` are treated as numerical noise and clipped to zero.
pub const NEGATIVE_CLIP: f64 = 1e-10;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("matrix is singular to working precision (pivot magnitude {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },
    #[error("matrix is not Hermitian: deviation {deviation:e}")]
    NotHermitian { deviation: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Square complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim.min(8) {
            write!(f, "  ")?;
            for j in 0..self.dim.min(8) {
                let z = self[(i, j)];
                write!(f, "{:+.3e}{:+.3e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Build from row-major entries. Panics if `data.len()` is not `dim * dim`.
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data has wrong length");
        Self { dim, data }
    }

    /// Projector `|psi><psi|`.
    pub fn outer(psi: &[C64]) -> Self {
        Self::from_fn(psi.len(), |i, j| psi[i] * psi[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.dim, v.len(), "matvec dimension mismatch");
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        assert_eq!(self.dim, other.dim, "elementwise dimension mismatch");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&a| a * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// `Tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        assert_eq!(self.dim, other.dim, "trace_product dimension mismatch");
        let n = self.dim;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm of `A - A†`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol * self.frobenius_norm().max(1.0)
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }
}

/// Eigendecomposition `A = V diag(λ) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    /// `V f(Λ) V†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = ComplexMatrix::zeros(n);
        for k in 0..n {
            if fl[k] == 0.0 {
                continue;
            }
            for i in 0..n {
                let a = v[(i, k)] * fl[k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * v[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Hermitian eigensolver: Householder reduction to a real tridiagonal matrix
/// followed by implicit QL with Wilkinson shifts.
///
/// Only the lower triangle is trusted; the input is symmetrized first.
pub fn eigh(a: &ComplexMatrix) -> Result<HermitianEig> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = a.dim();
    if n == 0 {
        return Ok(HermitianEig { eigenvalues: vec![], eigenvectors: ComplexMatrix::zeros(0) });
    }
    let mut work = a.hermitian_part();
    let (diag, sub_abs, q_rows) = tridiagonalize(&mut work);
    let mut d = diag;
    let mut e = sub_abs;
    // rows of `vt` are the columns of Q D; QL rotations then act on contiguous rows.
    let mut vt = q_rows;
    tridiagonal_ql(&mut d, &mut e, &mut vt, a)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let eigenvalues = order.iter().map(|&i| d[i]).collect();
    let mut eigenvectors = ComplexMatrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        let row = &vt[src * n..(src + 1) * n];
        for (r, &z) in row.iter().enumerate() {
            eigenvectors[(r, col)] = z;
        }
    }
    Ok(HermitianEig { eigenvalues, eigenvectors })
}

/// Reduces the Hermitian `a` in place. Returns the real diagonal, the moduli of
/// the subdiagonal, and the transposed matrix `(Q D)ᵀ` in row-major order, where
/// `D` is the diagonal phase matrix that makes the subdiagonal real.
fn tridiagonalize(a: &mut ComplexMatrix) -> (Vec<f64>, Vec<f64>, Vec<C64>) {
    let n = a.dim();
    let zero = C64::new(0.0, 0.0);
    let mut reflectors: Vec<Option<Vec<C64>>> = Vec::with_capacity(n.saturating_sub(2));
    let mut sub = vec![zero; n];

    for k in 0..n.saturating_sub(1) {
        let m = n - k - 1;
        let x: Vec<C64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let xnorm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let tail_norm = x[1..].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if m == 1 || tail_norm == 0.0 {
            sub[k] = x[0];
            reflectors.push(None);
            continue;
        }
        let phase = if x[0].norm() > 0.0 { x[0] / x[0].norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * xnorm;
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // p = A v on the trailing block
        let mut p = vec![zero; m];
        for (ii, pi) in p.iter_mut().enumerate() {
            let row = &a.data[(k + 1 + ii) * n + k + 1..(k + 1 + ii) * n + n];
            *pi = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let kappa: C64 = v.iter().zip(&p).map(|(vi, pi)| vi.conj() * pi).sum();
        let w: Vec<C64> = p.iter().zip(&v).map(|(pi, vi)| pi - kappa * vi).collect();
        for ii in 0..m {
            let row = &mut a.data[(k + 1 + ii) * n + k + 1..(k + 1 + ii) * n + n];
            let vi2 = v[ii] * 2.0;
            let wi2 = w[ii] * 2.0;
            for (jj, r) in row.iter_mut().enumerate() {
                *r -= vi2 * w[jj].conj() + wi2 * v[jj].conj();
            }
        }
        sub[k] = alpha;
        for i in k + 2..n {
            a[(i, k)] = zero;
            a[(k, i)] = zero;
        }
        a[(k + 1, k)] = alpha;
        a[(k, k + 1)] = alpha.conj();
        reflectors.push(Some(v));
    }

    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();

    // Q = H_0 H_1 ... accumulated backwards.
    let mut q = ComplexMatrix::identity(n);
    for (k, refl) in reflectors.iter().enumerate().rev() {
        let Some(v) = refl else { continue };
        let off = k + 1;
        // Q[off.., off..] -= 2 v (v† Q[off.., off..])
        let mut vq = vec![zero; n - off];
        for (ii, vi) in v.iter().enumerate() {
            let row = &q.data[(off + ii) * n + off..(off + ii) * n + n];
            let vc = vi.conj();
            for (acc, r) in vq.iter_mut().zip(row) {
                *acc += vc * r;
            }
        }
        for (ii, vi) in v.iter().enumerate() {
            let row = &mut q.data[(off + ii) * n + off..(off + ii) * n + n];
            let vi2 = vi * 2.0;
            for (r, acc) in row.iter_mut().zip(&vq) {
                *r -= vi2 * acc;
            }
        }
    }

    let mut phases = vec![C64::new(1.0, 0.0); n];
    let mut sub_abs = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let s = sub[k];
        let r = s.norm();
        sub_abs[k] = r;
        let ph = if r > 0.0 { s / r } else { C64::new(1.0, 0.0) };
        phases[k + 1] = phases[k] * ph;
    }
    let mut vt = vec![zero; n * n];
    for j in 0..n {
        for r in 0..n {
            vt[j * n + r] = q[(r, j)] * phases[j];
        }
    }
    (diag, sub_abs, vt)
}

/// Implicit QL on the real symmetric tridiagonal `(d, e)` with `e[i] = T[i+1, i]`.
/// Rotations are applied to rows of `vt`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], vt: &mut [C64], original: &ComplexMatrix) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let max_iter = 60 * n.max(1);
    let mut total_iter = 0usize;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= EPS * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            loop {
                total_iter += 1;
                if total_iter > max_iter {
                    let residual = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let _ = original;
                    return Err(NumericsError::NoConvergence { iterations: total_iter, residual });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hb = *b;
                        *b = *a * s + hb * c;
                        *a = *a * c - hb * s;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= EPS * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: ComplexMatrix,
    perm: Vec<usize>,
    /// Smallest pivot magnitude encountered.
    pub min_pivot: f64,
    /// Estimate of the 1-norm condition number.
    pub condition_estimate: f64,
}

impl LuFactorization {
    pub fn new(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        let n = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            min_pivot = min_pivot.min(pmag);
            if pmag <= n as f64 * EPS * scale {
                return Err(NumericsError::Singular { column: k, pivot: pmag });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / pivot;
                lu[(i, k)] = l;
                if l.re == 0.0 && l.im == 0.0 {
                    continue;
                }
                let (upper, lower) = lu.data.split_at_mut(i * n);
                let row_k = &upper[k * n + k + 1..k * n + n];
                let row_i = &mut lower[k + 1..n];
                for (x, y) in row_i.iter_mut().zip(row_k) {
                    *x -= l * y;
                }
            }
        }
        let mut fac = Self { lu, perm, min_pivot, condition_estimate: f64::NAN };
        fac.condition_estimate = fac.estimate_condition(a);
        Ok(fac)
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.dim();
        assert_eq!(b.len(), n, "rhs dimension mismatch");
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: C64 = row[..i].iter().zip(&x[..i]).map(|(l, y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: C64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(u, y)| u * y).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `A† x = b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.dim();
        // A = Pᵀ L U, so A† = U† L† P.
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..i {
                s += self.lu[(k, i)].conj() * y[k];
            }
            y[i] = (y[i] - s) / self.lu[(i, i)].conj();
        }
        for i in (0..n).rev() {
            let mut s = C64::new(0.0, 0.0);
            for k in i + 1..n {
                s += self.lu[(k, i)].conj() * y[k];
            }
            y[i] -= s;
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Hager's estimator for `‖A⁻¹‖₁`, times `‖A‖₁`.
    fn estimate_condition(&self, a: &ComplexMatrix) -> f64 {
        let n = a.dim();
        if n == 0 {
            return 1.0;
        }
        let norm_a = (0..n).map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max);
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|z| z.norm()).sum::<f64>();
            let xi: Vec<C64> = y
                .iter()
                .map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) })
                .collect();
            let z = self.solve_adjoint(&xi);
            let (j, zmax) = z.iter().enumerate().map(|(j, z)| (j, z.norm())).fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![C64::new(0.0, 0.0); n];
            x[j] = C64::new(1.0, 0.0);
        }
        norm_a * est
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &ComplexMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if b.len() != a.dim() {
        return Err(NumericsError::DimensionMismatch { left: a.dim(), right: b.len() });
    }
    Ok(LuFactorization::new(a)?.solve(b))
}

fn clipped_eigenvalues(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&l| {
            if l >= 0.0 {
                Ok(l)
            } else if l >= -NEGATIVE_CLIP {
                Ok(0.0)
            } else {
                Err(NumericsError::NotPsd { eigenvalue: l })
            }
        })
        .collect()
}

/// Principal square root of a positive semidefinite Hermitian matrix.
pub fn matrix_sqrt_psd(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = eigh(a)?;
    let clipped = clipped_eigenvalues(&eig.eigenvalues)?;
    let eig = HermitianEig { eigenvalues: clipped, eigenvectors: eig.eigenvectors };
    Ok(eig.reconstruct_with(f64::sqrt))
}

/// `Tr|A|` for Hermitian `A`: the sum of absolute eigenvalues.
pub fn trace_norm(a: &ComplexMatrix) -> Result<f64> {
    Ok(eigh(a)?.eigenvalues.iter().map(|l| l.abs()).sum())
}

/// Singular values (descending) by one-sided Jacobi rotations.
///
/// One-sided Jacobi keeps small singular values accurate in absolute terms,
/// which the fidelity needs: `Tr|√ρ√σ|` is dominated by `1 - O(dω²)` cancellations.
pub fn singular_values(a: &ComplexMatrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = a.dim();
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| (0..n).map(|i| a[(i, j)]).collect()).collect();
    let tol = EPS * n as f64;
    // Pairs whose coupling is below this cannot move the singular values measurably.
    let floor = (EPS * a.frobenius_norm()).powi(2);
    let max_sweeps = 80;
    for sweep in 0.. {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (left, right) = cols.split_at_mut(j);
                let ci = &mut left[i];
                let cj = &mut right[0];
                let alpha: f64 = ci.iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cj.iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = ci.iter().zip(cj.iter()).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g <= floor || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma.conj() / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                    let yp = *y * phase;
                    let xi = *x;
                    *x = xi * c - yp * s;
                    *y = xi * s + yp * c;
                }
            }
        }
        if !rotated {
            break;
        }
        if sweep + 1 >= max_sweeps {
            return Err(NumericsError::NoConvergence { iterations: max_sweeps, residual: f64::NAN });
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Uhlmann fidelity `F = (Tr√(√ρ σ √ρ))²`, evaluated as `(Tr|√ρ √σ|)²`.
pub fn fidelity(rho: &ComplexMatrix, sigma: &ComplexMatrix) -> Result<f64> {
    let root = root_fidelity(rho, sigma)?;
    Ok((root * root).clamp(0.0, 1.0))
}

/// `Tr|√ρ √σ|` for positive semidefinite arguments of any trace.
pub fn root_fidelity(rho: &ComplexMatrix, sigma: &ComplexMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(NumericsError::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
    }
    let n = rho.dim();
    let er = eigh(rho)?;
    let es = eigh(sigma)?;
    let lr = clipped_eigenvalues(&er.eigenvalues)?;
    let ls = clipped_eigenvalues(&es.eigenvalues)?;
    // √ρ√σ = U √Λ (U†V) √M V†; the outer unitaries do not change singular values.
    let overlap = er.eigenvectors.adjoint().matmul(&es.eigenvectors);
    let b = ComplexMatrix::from_fn(n, |i, j| overlap[(i, j)] * (lr[i].sqrt() * ls[j].sqrt()));
    Ok(singular_values(&b)?.iter().sum())
}

/// Golden-section search for a maximum of `f` on `[a, b]`, stopping once the
/// bracket is narrower than `tol`. Returns the best point evaluated.
pub fn golden_section_max<E>(mut f: impl FnMut(f64) -> std::result::Result<f64, E>, a: f64, b: f64, tol: f64) -> std::result::Result<(f64, f64), E> {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        random_matrix(n, rng).hermitian_part()
    }

    fn random_density(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let b = random_matrix(n, rng);
        let p = b.adjoint().matmul(&b);
        let tr = p.trace().re;
        p.scale(C64::new(1.0 / tr, 0.0))
    }

    /// Number of eigenvalues below `x` from the inertia of the LDL† factorization of `A - x I`.
    fn count_below(a: &ComplexMatrix, x: f64) -> usize {
        let n = a.dim();
        let mut m = ComplexMatrix::from_fn(n, |i, j| if i == j { a[(i, j)] - x } else { a[(i, j)] });
        let mut negatives = 0;
        for k in 0..n {
            let mut piv = m[(k, k)].re;
            if piv == 0.0 {
                piv = -1e-300;
            }
            if piv < 0.0 {
                negatives += 1;
            }
            for i in k + 1..n {
                let l = m[(i, k)] / piv;
                for j in k + 1..n {
                    let u = m[(k, j)];
                    m[(i, j)] -= l * u;
                }
            }
        }
        negatives
    }

    fn bisection_eigenvalues(a: &ComplexMatrix) -> Vec<f64> {
        let n = a.dim();
        let radius = (0..n).map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
        (0..n)
            .map(|k| {
                let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count_below(a, mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    #[test]
    fn pauli_x_eigenpairs() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let a = ComplexMatrix::from_row_major(2, vec![zero, one, one, zero]);
        let eig = eigh(&a).unwrap();
        assert!((eig.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = eigh(&ComplexMatrix::identity(5)).unwrap();
        assert!(eig.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-14));
    }

    #[test]
    fn eigenvalues_match_inertia_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_hermitian(12, &mut rng);
        let eig = eigh(&a).unwrap();
        let oracle = bisection_eigenvalues(&a);
        for (x, y) in eig.eigenvalues.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn eigh_reconstruction_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 2 + (trial * 62) / 99;
            let a = random_hermitian(n, &mut rng);
            let eig = eigh(&a).unwrap();
            let norm = a.frobenius_norm();
            let recon = eig.reconstruct().sub(&a).frobenius_norm();
            assert!(recon <= 1e-10 * norm, "n={n} reconstruction {recon}");
            let v = &eig.eigenvectors;
            let unit = v.adjoint().matmul(v).sub(&ComplexMatrix::identity(n)).frobenius_norm();
            assert!(unit <= 1e-10 * norm.max(1.0), "n={n} unitarity {unit}");
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn eigh_handles_already_diagonal_and_tridiagonal() {
        let a = ComplexMatrix::from_diag(&[3.0, -1.0, 2.0, 0.0]);
        let eig = eigh(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![-1.0, 0.0, 2.0, 3.0]);
        let mut t = ComplexMatrix::zeros(4);
        for i in 0..4 {
            t[(i, i)] = C64::new(i as f64, 0.0);
        }
        for i in 0..3 {
            t[(i + 1, i)] = C64::new(0.0, 0.5);
            t[(i, i + 1)] = C64::new(0.0, -0.5);
        }
        let eig = eigh(&t).unwrap();
        assert!(eig.reconstruct().sub(&t).frobenius_norm() < 1e-13);
    }

    #[test]
    fn lu_identity_and_diagonal() {
        let b = vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)];
        let x = lu_solve(&ComplexMatrix::identity(2), &b).unwrap();
        assert_eq!(x, b);
        let a = ComplexMatrix::from_diag(&[2.0, 4.0]);
        let x = lu_solve(&a, &[C64::new(2.0, 0.0), C64::new(8.0, 0.0)]).unwrap();
        assert!((x[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - C64::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn lu_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let mut a = random_matrix(n, &mut rng);
        for i in 0..n {
            a[(i, i)] += C64::new(n as f64, 0.0);
        }
        let b: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let fac = LuFactorization::new(&a).unwrap();
        let x = fac.solve(&b);
        let ax = a.matvec(&x);
        let res = ax.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        let xn = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let bn = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(res <= 1e-9 * (a.frobenius_norm() * xn + bn));
        assert!(fac.condition_estimate.is_finite() && fac.condition_estimate >= 1.0);
    }

    #[test]
    fn lu_singular_reports_pivot() {
        let a = ComplexMatrix::from_diag(&[1.0, 0.0]);
        match lu_solve(&a, &[C64::new(1.0, 0.0); 2]) {
            Err(NumericsError::Singular { column, pivot }) => {
                assert_eq!(column, 1);
                assert_eq!(pivot, 0.0);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn sqrt_of_simple_matrices() {
        let i = ComplexMatrix::identity(3);
        assert!(matrix_sqrt_psd(&i).unwrap().sub(&i).frobenius_norm() < 1e-14);
        let s = matrix_sqrt_psd(&ComplexMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(s.sub(&ComplexMatrix::from_diag(&[2.0, 3.0])).frobenius_norm() < 1e-14);
    }

    #[test]
    fn sqrt_random_psd_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_matrix(10, &mut rng);
        let a = b.adjoint().matmul(&b);
        let s = matrix_sqrt_psd(&a).unwrap();
        assert!(s.matmul(&s).sub(&a).frobenius_norm() <= 1e-8 * a.frobenius_norm());
        let ss = matrix_sqrt_psd(&s).unwrap();
        let four = ss.matmul(&ss).matmul(&ss).matmul(&ss);
        assert!(four.sub(&a).frobenius_norm() <= 1e-6 * a.frobenius_norm());
    }

    #[test]
    fn sqrt_rejects_negative_and_clips_noise() {
        let err = matrix_sqrt_psd(&ComplexMatrix::from_diag(&[1.0, -1e-3])).unwrap_err();
        assert_eq!(err, NumericsError::NotPsd { eigenvalue: -1e-3 });
        let s = matrix_sqrt_psd(&ComplexMatrix::from_diag(&[1.0, -1e-12])).unwrap();
        assert_eq!(s[(1, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn trace_norm_examples() {
        assert!((trace_norm(&ComplexMatrix::from_diag(&[1.0, -1.0])).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(trace_norm(&ComplexMatrix::zeros(4)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(8, &mut rng);
        let sigma = random_density(8, &mut rng);
        let diff = rho.sub(&sigma);
        let oracle: f64 = bisection_eigenvalues(&diff).iter().map(|l| l.abs()).sum();
        let tn = trace_norm(&diff).unwrap();
        assert!((tn - oracle).abs() < 1e-10);
        assert!(tn <= 2.0);
    }

    #[test]
    fn singular_values_match_eigenvalues_of_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_matrix(9, &mut rng);
        let sv = singular_values(&a).unwrap();
        let gram = eigh(&a.adjoint().matmul(&a)).unwrap();
        let mut from_gram: Vec<f64> = gram.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        from_gram.reverse();
        for (x, y) in sv.iter().zip(&from_gram) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fidelity_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(6, &mut rng);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);
        let p0 = ComplexMatrix::from_diag(&[1.0, 0.0]);
        let p1 = ComplexMatrix::from_diag(&[0.0, 1.0]);
        assert!(fidelity(&p0, &p1).unwrap().abs() < 1e-15);
        assert!(matches!(
            fidelity(&p0, &ComplexMatrix::identity(3)),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fidelity_pure_states_is_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = 7;
            let mut psi: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mut phi: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            for v in [&mut psi, &mut phi] {
                let nn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                v.iter_mut().for_each(|z| *z /= nn);
            }
            let overlap: C64 = psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
            let f = fidelity(&ComplexMatrix::outer(&psi), &ComplexMatrix::outer(&phi)).unwrap();
            assert!((f - overlap.norm_sqr()).abs() < 1e-8);
        }
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let rho = random_density(8, &mut rng);
            let sigma = random_density(8, &mut rng);
            let a = fidelity(&rho, &sigma).unwrap();
            let b = fidelity(&sigma, &rho).unwrap();
            assert!((a - b).abs() < 1e-8);
            assert!((0.0..=1.0).contains(&a));
            let tn = trace_norm(&rho.sub(&sigma)).unwrap();
            assert!(tn <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn fidelity_resolves_tiny_infidelity() {
        // Two nearby mixed states: 1 - √F must be resolved far below 1e-8.
        let n = 40;
        let p: Vec<f64> = (0..n).map(|k| 0.5f64.powi(k as i32)).collect();
        let tot: f64 = p.iter().sum();
        let rho = ComplexMatrix::from_diag(&p.iter().map(|x| x / tot).collect::<Vec<_>>());
        let d: f64 = 1e-4;
        let q: Vec<f64> = (0..n).map(|k| (0.5 + d).powi(k as i32)).collect();
        let totq: f64 = q.iter().sum();
        let sigma = ComplexMatrix::from_diag(&q.iter().map(|x| x / totq).collect::<Vec<_>>());
        let exact: f64 = p.iter().zip(&q).map(|(a, b)| (a * b / (tot * totq)).sqrt()).sum();
        let f = fidelity(&rho, &sigma).unwrap();
        assert!((f.sqrt() - exact).abs() < 1e-13, "{} vs {}", f.sqrt(), exact);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(32))]
        #[test]
        fn prop_trace_norm_of_density_difference_bounded(seed in 0u64..10_000, n in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(n, &mut rng);
            let sigma = random_density(n, &mut rng);
            let tn = trace_norm(&rho.sub(&sigma)).unwrap();
            proptest::prop_assert!(tn <= 2.0 + 1e-12);
            let f = fidelity(&rho, &sigma).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_section_max(|x| Ok::<_, ()>(-(x - 0.3f64).powi(2) + 2.0), -1.0, 2.0, 1e-8).unwrap();
        assert!((x - 0.3).abs() < 1e-7 && (v - 2.0).abs() < 1e-12);
    }
}
