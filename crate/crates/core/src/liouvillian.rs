//! Lindblad superoperator, steady states and transient dynamics.
//!
//! Density matrices are column-stacked: `vec(ρ)[m + n·N] = ρ_mn`, so that
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)` and
//!
//! ```text
//! L = −i(I⊗H − Hᵀ⊗I) + Γ(2 ā⊗a − I⊗a†a − (a†a)ᵀ⊗I)
//! ```
//!
//! The steady-state solve restricts to the parity-even sector (`m − n` even),
//! which the Hamiltonian and dissipator both preserve, and orders unknowns by
//! diagonal offset so the system is banded with bandwidth about `N`.

use log::debug;

use crate::error::{Error, Result};
use crate::fock::{self, DensityMatrix, SystemParams, TAIL_TOL};
use crate::gaussian;
use crate::numerics::{ComplexMatrix, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Residual bound `‖L vec ρ‖` accepted from the steady-state solver.
pub const STEADY_RESIDUAL_TOL: f64 = 1e-9;

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    /// Duplicates are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.1, t.0));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut m = Self { nrows, ncols, col_ptr, row_idx, values };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(self.values.len());
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                if self.values[k] != ZERO {
                    row_idx.push(self.row_idx[k]);
                    values.push(self.values[k]);
                }
            }
            col_ptr[c + 1] = row_idx.len();
        }
        self.col_ptr = col_ptr;
        self.row_idx = row_idx;
        self.values = values;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column `c` as `(row, value)`.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.column(c).find(|&(i, _)| i == r).map_or(ZERO, |(_, v)| v)
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = ZERO);
        for (c, &xc) in x.iter().enumerate() {
            if xc == ZERO {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }
}

#[inline]
pub fn vec_index(m: usize, n: usize, dim: usize) -> usize {
    m + n * dim
}

/// Column-stacked vector of `ρ`.
pub fn vectorize(rho: &ComplexMatrix) -> Vec<C64> {
    let n = rho.dim();
    let mut v = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            v[vec_index(i, j, n)] = rho[(i, j)];
        }
    }
    v
}

pub fn unvectorize(v: &[C64], dim: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |i, j| v[vec_index(i, j, dim)])
}

type Triplets = Vec<(usize, usize, C64)>;

fn sparse_entries(m: &ComplexMatrix) -> Triplets {
    let n = m.dim();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

fn identity_entries(n: usize) -> Triplets {
    (0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect()
}

/// Appends `scale · (B ⊗ A)` in column-stacked indexing.
fn push_kron(b: &Triplets, a: &Triplets, dim: usize, scale: C64, out: &mut Triplets) {
    for &(n, l, bv) in b {
        for &(m, k, av) in a {
            out.push((vec_index(m, n, dim), vec_index(k, l, dim), scale * bv * av));
        }
    }
}

/// `−i(I⊗H − Hᵀ⊗I)`, i.e. `ρ ↦ −i[H, ρ]`.
pub fn commutator_superoperator(h: &ComplexMatrix) -> SparseMatrix {
    let n = h.dim();
    let mut t = Vec::new();
    let id = identity_entries(n);
    let hs = sparse_entries(h);
    let ht = sparse_entries(&h.transpose());
    push_kron(&id, &hs, n, C64::new(0.0, -1.0), &mut t);
    push_kron(&ht, &id, n, C64::new(0.0, 1.0), &mut t);
    SparseMatrix::from_triplets(n * n, n * n, t)
}

fn liouvillian_triplets(p: &SystemParams, dim: usize) -> Result<Triplets> {
    let h = fock::build_hamiltonian(p, dim)?.matrix;
    let a = fock::annihilation(dim)?.matrix;
    let num = fock::number(dim)?.matrix;
    let id = identity_entries(dim);
    let mut t = Vec::new();
    push_kron(&id, &sparse_entries(&h), dim, C64::new(0.0, -1.0), &mut t);
    push_kron(&sparse_entries(&h.transpose()), &id, dim, C64::new(0.0, 1.0), &mut t);
    let abar = ComplexMatrix::from_fn(dim, |i, j| a[(i, j)].conj());
    let g = C64::new(p.gamma, 0.0);
    push_kron(&sparse_entries(&abar), &sparse_entries(&a), dim, g * 2.0, &mut t);
    push_kron(&id, &sparse_entries(&num), dim, -g, &mut t);
    push_kron(&sparse_entries(&num.transpose()), &id, dim, -g, &mut t);
    Ok(t)
}

/// The Lindblad generator on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: SparseMatrix,
}

impl Superoperator {
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        unvectorize(&self.matrix.matvec(&vectorize(rho)), self.dim)
    }

    /// `‖L vec ρ‖₂`.
    pub fn residual(&self, rho: &ComplexMatrix) -> f64 {
        self.matrix.matvec(&vectorize(rho)).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry of `Tr ∘ L`, which vanishes for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let n = self.dim;
        (0..n * n)
            .map(|c| {
                self.matrix
                    .column(c)
                    .filter(|&(r, _)| r % n == r / n)
                    .map(|(_, v)| v)
                    .sum::<C64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn build_liouvillian(p: &SystemParams, dim: usize) -> Result<Superoperator> {
    p.validate()?;
    let t = liouvillian_triplets(p, dim)?;
    Ok(Superoperator { dim, matrix: SparseMatrix::from_triplets(dim * dim, dim * dim, t) })
}

/// Maps parity-even `(m, n)` to banded unknown indices, blocked by `d = m − n`.
struct EvenSectorLayout {
    dim: usize,
    /// `offsets[(d + dim - 1) / 2]` is the first unknown of block `d`.
    offsets: Vec<usize>,
    len: usize,
}

impl EvenSectorLayout {
    fn new(dim: usize) -> Self {
        let top = dim as isize - 1;
        let mut offsets = Vec::new();
        let mut len = 0;
        let mut d = Self::lowest_offset(dim);
        while d <= top {
            offsets.push(len);
            len += dim - d.unsigned_abs();
            d += 2;
        }
        Self { dim, offsets, len }
    }

    /// Most negative even `m − n`.
    fn lowest_offset(dim: usize) -> isize {
        let top = dim as isize - 1;
        if top % 2 == 0 {
            -top
        } else {
            -top + 1
        }
    }

    fn first_d(&self) -> isize {
        Self::lowest_offset(self.dim)
    }

    fn index(&self, m: usize, n: usize) -> Option<usize> {
        let d = m as isize - n as isize;
        if d % 2 != 0 {
            return None;
        }
        let block = ((d - self.first_d()) / 2) as usize;
        Some(self.offsets[block] + m.min(n))
    }

    fn coordinates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len);
        let mut d = self.first_d();
        while d < self.dim as isize {
            for j in 0..self.dim - d.unsigned_abs() {
                if d >= 0 {
                    out.push((j + d as usize, j));
                } else {
                    out.push((j, j + d.unsigned_abs()));
                }
            }
            d += 2;
        }
        out
    }
}

/// LU factorization of a band matrix with partial pivoting, in LAPACK `gbtrf`
/// storage: column `j` holds rows `j − kl − ku ..= j + kl`.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<C64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn from_triplets(n: usize, kl: usize, ku: usize, entries: &[(usize, usize, C64)]) -> Self {
        let ldab = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, ku, ldab, ab: vec![ZERO; n * ldab], piv: vec![0; n] };
        for &(i, j, v) in entries {
            let k = lu.pos(i, j);
            lu.ab[k] += v;
        }
        lu
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    fn factor(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        let scale = self.ab.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let base = self.pos(j, j);
            let mut p = 0;
            let mut best = -1.0;
            for i in 0..=km {
                let v = self.ab[base + i].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[j] = j + p;
            if best <= f64::EPSILON * scale * 1e-3 {
                return Err(Error::SingularSteadyState {
                    reason: format!("zero pivot {best:e} at unknown {j} of {n}"),
                });
            }
            ju = ju.max((j + self.ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.pos(j, c);
                    self.ab.swap(a, a + p);
                }
            }
            let inv = C64::new(1.0, 0.0) / self.ab[base];
            for i in 1..=km {
                self.ab[base + i] *= inv;
            }
            if km == 0 {
                continue;
            }
            for c in j + 1..=ju {
                let cpos = self.pos(j, c);
                let u = self.ab[cpos];
                if u == ZERO {
                    continue;
                }
                let (left, right) = self.ab.split_at_mut(cpos);
                let lcol = &left[base + 1..base + 1 + km];
                let ccol = &mut right[1..1 + km];
                for (x, l) in ccol.iter_mut().zip(lcol) {
                    *x -= l * u;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [C64]) {
        let (n, kl) = (self.n, self.kl);
        let kv = self.kl + self.ku;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj == ZERO {
                continue;
            }
            let base = self.pos(j, j);
            for i in 1..=km {
                b[j + i] -= self.ab[base + i] * bj;
            }
        }
        for j in (0..n).rev() {
            let base = self.pos(j, j);
            b[j] /= self.ab[base];
            let bj = b[j];
            let top = j.saturating_sub(kv);
            for i in top..j {
                b[i] -= self.ab[base - (j - i)] * bj;
            }
        }
    }
}

/// Steady state at a fixed truncation.
///
/// Solves the parity-even sector with the `ρ_00` equation replaced by the trace
/// condition, then checks the residual on the full generator.
pub fn steady_state(p: &SystemParams, dim: usize) -> Result<DensityMatrix> {
    p.validate()?;
    if dim < 2 {
        return Err(Error::InvalidParameter { name: "dim", value: dim as f64, reason: "must be at least 2" });
    }
    if p.epsilon == 0.0 {
        return Ok(DensityMatrix::vacuum(dim));
    }
    let triplets = liouvillian_triplets(p, dim)?;
    let layout = EvenSectorLayout::new(dim);
    let n = layout.len;
    let trace_row = layout.index(0, 0).expect("ρ_00 is even");
    let mut reduced: Triplets = Vec::with_capacity(triplets.len() / 2 + dim);
    for &(r, c, v) in &triplets {
        let (rm, rn) = (r % dim, r / dim);
        let (cm, cn) = (c % dim, c / dim);
        let (Some(ri), Some(ci)) = (layout.index(rm, rn), layout.index(cm, cn)) else { continue };
        if ri != trace_row {
            reduced.push((ri, ci, v));
        }
    }
    for m in 0..dim {
        reduced.push((trace_row, layout.index(m, m).expect("diagonal is even"), C64::new(1.0, 0.0)));
    }
    let (mut kl, mut ku) = (0usize, 0usize);
    for &(i, j, _) in &reduced {
        if i > j {
            kl = kl.max(i - j);
        } else {
            ku = ku.max(j - i);
        }
    }
    debug!("steady state: dim {dim}, {n} unknowns, bandwidth ({kl}, {ku})");
    let mut lu = BandLu::from_triplets(n, kl, ku, &reduced);
    lu.factor()?;
    let mut rhs = vec![ZERO; n];
    rhs[trace_row] = C64::new(1.0, 0.0);
    let mut x = rhs.clone();
    lu.solve(&mut x);

    let full = SparseMatrix::from_triplets(dim * dim, dim * dim, triplets);
    let coords = layout.coordinates();
    let assemble = |x: &[C64]| {
        let mut m = ComplexMatrix::zeros(dim);
        for (&(i, j), &v) in coords.iter().zip(x) {
            m[(i, j)] = v;
        }
        m
    };
    let reduced_matrix = SparseMatrix::from_triplets(n, n, reduced);
    let mut rho = assemble(&x);
    let mut residual = full.matvec(&vectorize(&rho)).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    // iterative refinement on the bordered system
    for _ in 0..3 {
        if residual <= 0.1 * STEADY_RESIDUAL_TOL {
            break;
        }
        let ax = reduced_matrix.matvec(&x);
        let mut r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        lu.solve(&mut r);
        x.iter_mut().zip(&r).for_each(|(xi, di)| *xi += di);
        rho = assemble(&x);
        residual = full.matvec(&vectorize(&rho)).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    let mut rho = rho.hermitian_part();
    let tr = rho.trace().re;
    rho = rho.scale(C64::new(1.0 / tr, 0.0));
    let residual = full.matvec(&vectorize(&rho)).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !residual.is_finite() || residual > STEADY_RESIDUAL_TOL {
        return Err(Error::Residual { residual, tolerance: STEADY_RESIDUAL_TOL });
    }
    DensityMatrix::new(rho)
}

/// Photon-number estimate used to seed the truncation.
pub fn photon_estimate(p: &SystemParams) -> f64 {
    let ec = p.eps_c();
    let fluct = if p.chi > 0.0 { 0.5 / p.chi.sqrt() } else { f64::INFINITY };
    if p.epsilon < ec {
        gaussian::gaussian_photon_number(p.omega, p.epsilon, p.gamma).unwrap_or(f64::INFINITY).min(fluct)
    } else {
        match gaussian::broken_phase_solution(p.omega, p.epsilon, p.chi, p.gamma) {
            Ok(b) => b.alpha_sq + fluct,
            Err(_) => fluct,
        }
    }
}

/// Truncation policy for [`steady_state_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub min_dim: usize,
    pub max_dim: usize,
    pub tail_tol: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { min_dim: 20, max_dim: 320, tail_tol: TAIL_TOL }
    }
}

impl Truncation {
    pub fn initial_dim(&self, p: &SystemParams) -> usize {
        let est = photon_estimate(p);
        let guess = if est.is_finite() { (2.0 * est + 20.0).ceil() as usize } else { self.max_dim };
        guess.clamp(self.min_dim, self.max_dim)
    }
}

/// Steady state with the truncation grown by half until the last level holds at
/// most `tail_tol` population.
pub fn steady_state_adaptive(p: &SystemParams, trunc: &Truncation) -> Result<DensityMatrix> {
    steady_state_from(p, trunc, trunc.initial_dim(p))
}

/// As [`steady_state_adaptive`] but starting from a given dimension.
pub fn steady_state_from(p: &SystemParams, trunc: &Truncation, start: usize) -> Result<DensityMatrix> {
    let mut dim = start.max(2);
    loop {
        let rho = steady_state(p, dim)?;
        let tail = rho.tail_mass();
        if tail <= trunc.tail_tol {
            return Ok(rho);
        }
        if dim >= trunc.max_dim {
            return Err(Error::Truncation { dim, tail_mass: tail });
        }
        dim = (dim + dim / 2).min(trunc.max_dim);
        debug!("growing truncation to {dim} (tail {tail:e})");
    }
}

/// Observables recorded along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub phi: f64,
    pub times: Vec<f64>,
    pub n_photon: Vec<f64>,
    pub x_phi_sq: Vec<f64>,
    pub trace: Vec<f64>,
    pub purity: Vec<f64>,
    /// Largest `‖ρ − ρ†‖_F` seen at the output times.
    pub max_hermiticity_defect: f64,
    pub final_state: DensityMatrix,
}

/// Integration controls for [`time_evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    /// Ascending output times; the first is the initial time.
    pub times: Vec<f64>,
    /// Allowed local error per unit time.
    pub tolerance: f64,
    /// Quadrature angle for the recorded `<x_φ²>`.
    pub phi: f64,
}

impl TimeGrid {
    pub fn uniform(t_final: f64, samples: usize, phi: f64) -> Self {
        let m = samples.max(2);
        Self { times: (0..m).map(|i| t_final * i as f64 / (m - 1) as f64).collect(), tolerance: 1e-8, phi }
    }
}

fn hermitize_vec(v: &mut [C64], dim: usize) {
    for m in 0..dim {
        let d = vec_index(m, m, dim);
        v[d].im = 0.0;
        for n in m + 1..dim {
            let (i, j) = (vec_index(m, n, dim), vec_index(n, m, dim));
            let avg = (v[i] + v[j].conj()) * 0.5;
            v[i] = avg;
            v[j] = avg.conj();
        }
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `dρ/dt = L ρ` with an adaptive Dormand–Prince scheme, landing
/// exactly on each requested output time.
pub fn time_evolve(rho0: &DensityMatrix, p: &SystemParams, grid: &TimeGrid) -> Result<Trajectory> {
    p.validate()?;
    let times = &grid.times;
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter { name: "times", value: f64::NAN, reason: "must be non-empty and ascending" });
    }
    let dim = rho0.dim();
    let l = build_liouvillian(p, dim)?;
    let n2 = dim * dim;
    let mut y = vectorize(rho0.matrix());
    let mut t = times[0];
    let mut h = 1e-3;
    let h_min = 1e-12;
    let mut k: Vec<Vec<C64>> = vec![vec![ZERO; n2]; 7];
    let mut stage = vec![ZERO; n2];
    let mut y5 = vec![ZERO; n2];

    let mut traj = Trajectory {
        phi: grid.phi,
        times: Vec::with_capacity(times.len()),
        n_photon: Vec::new(),
        x_phi_sq: Vec::new(),
        trace: Vec::new(),
        purity: Vec::new(),
        max_hermiticity_defect: 0.0,
        final_state: rho0.clone(),
    };
    let record = |t: f64, y: &[C64], traj: &mut Trajectory| {
        let m = unvectorize(y, dim);
        traj.max_hermiticity_defect = traj.max_hermiticity_defect.max(m.hermiticity_defect());
        let rho = DensityMatrix::new_unchecked(m);
        traj.times.push(t);
        traj.n_photon.push(rho.photon_number());
        traj.x_phi_sq.push(rho.quadrature_moments(grid.phi).0);
        traj.trace.push(rho.matrix().trace().re);
        traj.purity.push(rho.purity());
        traj.final_state = rho;
    };
    record(t, &y, &mut traj);

    let mut have_k0 = false;
    for &target in &times[1..] {
        while t < target {
            let last = target - t <= h;
            let step = if last { target - t } else { h };
            if !have_k0 {
                l.matrix.matvec_into(&y, &mut k[0]);
                have_k0 = true;
            }
            for s in 1..7 {
                for i in 0..n2 {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        if A[s][j] != 0.0 {
                            acc += kj[i] * (step * A[s][j]);
                        }
                    }
                    stage[i] = acc;
                }
                let (_, rest) = k.split_at_mut(s);
                l.matrix.matvec_into(&stage, &mut rest[0]);
            }
            let mut err: f64 = 0.0;
            for i in 0..n2 {
                let mut hi5 = ZERO;
                let mut e = ZERO;
                for s in 0..7 {
                    hi5 += k[s][i] * B5[s];
                    e += k[s][i] * (B5[s] - B4[s]);
                }
                y5[i] = y[i] + hi5 * step;
                err = err.max((e * step).norm());
            }
            let allowed = grid.tolerance * step;
            if err <= allowed {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y5);
                // FSAL: the last stage is the derivative at the new point.
                k.swap(0, 6);
                // The exact flow is Hermitian; project out the round-off that
                // stiff, barely stable modes would otherwise amplify.
                hermitize_vec(&mut y, dim);
                hermitize_vec(&mut k[0], dim);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (allowed / err).powf(0.25)).clamp(0.2, 5.0) };
            if !(last && err <= allowed) {
                h = step * factor;
            }
            if h < h_min {
                return Err(Error::StepUnderflow { t, h });
            }
        }
        record(t, &y, &mut traj);
    }
    Ok(traj)
}
