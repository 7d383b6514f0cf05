//! Truncated Fock space: ladder operators, the Kerr Hamiltonian, density
//! matrices, quadrature statistics and the Wigner function.
//!
//! Conventions: `a = (x + i p)/√2`, so the vacuum has `<x²> = 1/2`, and the
//! rotated quadrature is `x_φ = cos φ x + sin φ p = (a e^{-iφ} + a† e^{iφ})/√2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Resonator parameters in units of the dissipation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega: f64,
    pub epsilon: f64,
    pub chi: f64,
    pub gamma: f64,
}

impl SystemParams {
    pub fn new(omega: f64, epsilon: f64, chi: f64, gamma: f64) -> Result<Self> {
        let p = Self { omega, epsilon, chi, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name, value: f64, ok: bool, reason| {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, value, reason })
            }
        };
        check("omega", self.omega, true, "must be finite")?;
        check("epsilon", self.epsilon, self.epsilon >= 0.0, "must be non-negative")?;
        check("chi", self.chi, self.chi >= 0.0, "must be non-negative")?;
        check("gamma", self.gamma, self.gamma > 0.0, "must be positive")
    }

    /// Critical pump `√(ω² + Γ²)`.
    pub fn eps_c(&self) -> f64 {
        self.omega.hypot(self.gamma)
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn with_chi(self, chi: f64) -> Self {
        Self { chi, ..self }
    }
}

/// An operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub matrix: ComplexMatrix,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidParameter { name: "dim", value: dim as f64, reason: "must be at least 2" });
    }
    Ok(())
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self { matrix: self.matrix.matmul(&other.matrix) }
    }
}

/// Annihilation operator, `a_{n-1,n} = √n`.
pub fn annihilation(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let mut m = ComplexMatrix::zeros(dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(FockOperator { matrix: m })
}

pub fn creation(dim: usize) -> Result<FockOperator> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    Ok(FockOperator { matrix: ComplexMatrix::from_diag(&(0..dim).map(|n| n as f64).collect::<Vec<_>>()) })
}

/// `x_φ = (a e^{-iφ} + a† e^{iφ})/√2`.
pub fn quadrature(phi: f64, dim: usize) -> Result<FockOperator> {
    let a = annihilation(dim)?.matrix;
    let c = C64::from_polar(1.0, -phi) / 2f64.sqrt();
    Ok(FockOperator { matrix: a.scale(c).add(&a.adjoint().scale(c.conj())) })
}

/// `H = ω a†a + (ε/2)(a†² + a²) + χ a†²a²`.
pub fn build_hamiltonian(p: &SystemParams, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let mut h = ComplexMatrix::zeros(dim);
    for n in 0..dim {
        let nf = n as f64;
        h[(n, n)] = C64::new(p.omega * nf + p.chi * nf * (nf - 1.0), 0.0);
        if n + 2 < dim {
            let v = 0.5 * p.epsilon * ((nf + 1.0) * (nf + 2.0)).sqrt();
            h[(n + 2, n)] = C64::new(v, 0.0);
            h[(n, n + 2)] = C64::new(v, 0.0);
        }
    }
    Ok(FockOperator { matrix: h })
}

/// Displacement `D(α) = exp(α a† − α* a)`, computed in a padded space and truncated.
pub fn displacement(alpha: C64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    if alpha.norm_sqr() > dim as f64 / 4.0 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha.norm(),
            reason: "|alpha|^2 must not exceed dim/4",
        });
    }
    let big = dim + 40;
    let a = annihilation(big)?.matrix;
    // i(α a† − α* a) is Hermitian.
    let gen = a.adjoint().scale(alpha).sub(&a.scale(alpha.conj())).scale(C64::new(0.0, 1.0));
    let eig = numerics::eigh(&gen)?;
    let v = &eig.eigenvectors;
    let phases: Vec<C64> = eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l)).collect();
    let d = ComplexMatrix::from_fn(dim, |i, j| (0..big).map(|k| v[(i, k)] * phases[k] * v[(j, k)].conj()).sum());
    Ok(FockOperator { matrix: d })
}

/// Coherent-state amplitudes `e^{-|α|²/2} αⁿ/√n!`.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut psi = Vec::with_capacity(dim);
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..dim {
        psi.push(c);
        c = c * alpha / ((n + 1) as f64).sqrt();
    }
    psi
}

/// Density matrix on a truncated Fock space.
///
/// Construction checks finiteness, Hermiticity (1e-10), trace (1e-9) and
/// positivity (-1e-9). Truncation adequacy is the caller's business; see
/// [`DensityMatrix::tail_mass`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

pub const TRACE_TOL: f64 = 1e-9;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
/// Largest acceptable population of the last Fock level.
pub const TAIL_TOL: f64 = 1e-8;

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.dim() < 1 {
            return Err(Error::InvalidState("empty matrix".into()));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let herm = matrix.hermiticity_defect();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = numerics::eigh(&matrix)?.eigenvalues[0];
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { matrix })
    }

    /// Skips the positivity check. Used for integrator output, where only trace and
    /// Hermiticity are maintained by construction.
    pub(crate) fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidParameter { name: "n", value: n as f64, reason: "must be below dim" });
        }
        let mut m = ComplexMatrix::zeros(dim);
        m[(n, n)] = C64::new(1.0, 0.0);
        Ok(Self { matrix: m })
    }

    pub fn vacuum(dim: usize) -> Self {
        let mut m = ComplexMatrix::zeros(dim);
        m[(0, 0)] = C64::new(1.0, 0.0);
        Self { matrix: m }
    }

    /// Normalized projector onto `psi`.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        let v: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Ok(Self { matrix: ComplexMatrix::outer(&v) })
    }

    pub fn coherent(alpha: C64, dim: usize) -> Result<Self> {
        Self::pure(&coherent_amplitudes(alpha, dim))
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.matrix[(m, n)]
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.matrix[(n, n)].re).collect()
    }

    /// Population of the highest retained level.
    pub fn tail_mass(&self) -> f64 {
        let n = self.dim();
        self.matrix[(n - 1, n - 1)].re
    }

    pub fn purity(&self) -> f64 {
        self.matrix.trace_product(&self.matrix).re
    }

    /// `Tr[ρ O]`; for Hermitian `O` the imaginary part must vanish to 1e-9.
    pub fn expectation(&self, op: &FockOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: op.dim() });
        }
        let v = self.matrix.trace_product(&op.matrix);
        if op.matrix.is_hermitian(1e-12) && v.im.abs() > 1e-9 {
            return Err(Error::InvalidState(format!("expectation of Hermitian operator has imaginary part {:e}", v.im)));
        }
        Ok(v)
    }

    pub fn photon_number(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.matrix[(n, n)].re).sum()
    }

    /// `<a>`.
    pub fn mean_field(&self) -> C64 {
        (1..self.dim()).map(|n| (n as f64).sqrt() * self.matrix[(n, n - 1)]).sum()
    }

    /// `Σ_k √((k+1)…(k+d)) ρ_{k+d,k}`, i.e. `<a^d>`.
    fn lowering_moment(&self, d: usize, weight: impl Fn(f64) -> f64) -> C64 {
        let n = self.dim();
        let mut acc = ZERO;
        for k in 0..n.saturating_sub(d) {
            let kf = k as f64;
            let f: f64 = (1..=d).map(|j| kf + j as f64).product::<f64>().sqrt();
            acc += self.matrix[(k + d, k)] * (f * weight(kf));
        }
        acc
    }

    /// Normally and anti-normally ordered moments used by the quadrature and
    /// heterodyne statistics. They are evaluated from matrix elements directly, so
    /// they are exact for the truncated state (no truncated-operator artifacts).
    pub fn moments(&self) -> Moments {
        let pops = self.populations();
        let mut n1 = 0.0;
        let mut k2 = 0.0;
        let mut aa_dag2 = 0.0;
        let mut a_dag2_a2 = 0.0;
        for (k, &p) in pops.iter().enumerate() {
            let kf = k as f64;
            n1 += kf * p;
            k2 += (2.0 * kf + 1.0).powi(2) * p;
            aa_dag2 += (kf + 1.0) * (kf + 2.0) * p;
            a_dag2_a2 += kf * (kf - 1.0) * p;
        }
        Moments {
            n: n1,
            k_sq: k2,
            a2: self.lowering_moment(2, |_| 1.0),
            a4: self.lowering_moment(4, |_| 1.0),
            a2k_plus_ka2: self.lowering_moment(2, |k| 4.0 * k + 6.0),
            a2_adag2: aa_dag2,
            adag2_a2: a_dag2_a2,
        }
    }

    /// `(<x_φ²>, <x_φ⁴>)`.
    pub fn quadrature_moments(&self, phi: f64) -> (f64, f64) {
        self.moments().quadrature(phi)
    }

    /// `e^{-iφn} ρ e^{iφn}`: measuring `x` on the result is measuring `x_φ` on `ρ`.
    pub fn rotate(&self, phi: f64) -> Self {
        let m = ComplexMatrix::from_fn(self.dim(), |i, j| {
            self.matrix[(i, j)] * C64::from_polar(1.0, -phi * (i as f64 - j as f64))
        });
        Self { matrix: m }
    }

    /// Uhlmann fidelity. States without odd-parity coherences are handled
    /// block by block, which is four times cheaper.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        let root = self.root_fidelity(other)?;
        Ok((root * root).clamp(0.0, 1.0))
    }

    /// `√F`, unclamped so that `1 − √F` keeps its sign-level noise visible.
    pub fn root_fidelity(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        if self.dim() < 4 || self.parity_defect() != 0.0 || other.parity_defect() != 0.0 {
            return Ok(numerics::root_fidelity(&self.matrix, &other.matrix)?);
        }
        let mut root = 0.0;
        for parity in 0..2 {
            let idx: Vec<usize> = (parity..self.dim()).step_by(2).collect();
            let block = |m: &ComplexMatrix| ComplexMatrix::from_fn(idx.len(), |i, j| m[(idx[i], idx[j])]);
            root += numerics::root_fidelity(&block(&self.matrix), &block(&other.matrix))?;
        }
        Ok(root)
    }

    /// Embeds into a larger space (zero padding) or truncates a negligible tail.
    pub fn resized(&self, dim: usize) -> Result<Self> {
        let n = self.dim();
        if dim < n {
            let dropped: f64 = (dim..n).map(|k| self.matrix[(k, k)].re).sum();
            if dropped > TAIL_TOL {
                return Err(Error::Truncation { dim, tail_mass: dropped });
            }
        }
        let mut m = ComplexMatrix::from_fn(dim, |i, j| if i < n && j < n { self.matrix[(i, j)] } else { ZERO });
        let tr = m.trace().re;
        m = m.scale(C64::new(1.0 / tr, 0.0));
        Ok(Self { matrix: m })
    }

    /// Largest `|ρ_mn|` with `m + n` odd.
    pub fn parity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if (i + j) % 2 == 1 {
                    worst = worst.max(self.matrix[(i, j)].norm());
                }
            }
        }
        worst
    }

    pub fn to_json(&self) -> String {
        let file = RhoFile {
            format: RHO_FORMAT.to_string(),
            dim: self.dim(),
            re: self.matrix.as_slice().iter().map(|z| z.re).collect(),
            im: self.matrix.as_slice().iter().map(|z| z.im).collect(),
        };
        serde_json::to_string(&file).expect("density matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RhoFile = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.format != RHO_FORMAT {
            return Err(Error::Serialization(format!("unsupported format tag `{}`", file.format)));
        }
        let n2 = file.dim * file.dim;
        if file.re.len() != n2 || file.im.len() != n2 {
            return Err(Error::Serialization(format!("expected {n2} entries for dim {}", file.dim)));
        }
        let data = file.re.iter().zip(&file.im).map(|(&r, &i)| C64::new(r, i)).collect();
        Self::new(ComplexMatrix::from_row_major(file.dim, data))
    }
}

pub const RHO_FORMAT: &str = "kerrcrit-rho-v1";

#[derive(Serialize, Deserialize)]
struct RhoFile {
    format: String,
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Moments of a single-mode state; `K = 2n + 1 = a a† + a† a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: f64,
    pub k_sq: f64,
    pub a2: C64,
    pub a4: C64,
    /// `<a² K + K a²>`.
    pub a2k_plus_ka2: C64,
    pub a2_adag2: f64,
    pub adag2_a2: f64,
}

impl Moments {
    /// `(<x_φ²>, <x_φ⁴>)`.
    pub fn quadrature(&self, phi: f64) -> (f64, f64) {
        let c2 = C64::from_polar(1.0, -2.0 * phi);
        let c4 = c2 * c2;
        let x2 = 0.5 * (2.0 * (c2 * self.a2).re + 2.0 * self.n + 1.0);
        let x4 = 0.25
            * (2.0 * (c4 * self.a4).re
                + self.a2_adag2
                + self.adag2_a2
                + 2.0 * (c2 * self.a2k_plus_ka2).re
                + self.k_sq);
        (x2, x4)
    }

    /// `<a a†>`.
    pub fn anti_normal(&self) -> f64 {
        self.n + 1.0
    }
}

/// Harmonic-oscillator eigenfunctions `ψ_0(x) … ψ_{n_max-1}(x)`, by the three-term
/// recurrence with running rescaling so that large `n` and `x` neither overflow nor
/// lose the Gaussian factor.
pub fn hermite_functions(x: f64, n_max: usize, out: &mut Vec<f64>) {
    out.clear();
    if n_max == 0 {
        return;
    }
    const BIG: f64 = 1e150;
    let mut log_scale = -0.5 * x * x;
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut scaled = Vec::with_capacity(n_max);
    let mut scales = Vec::with_capacity(n_max);
    for n in 0..n_max {
        scaled.push(cur);
        scales.push(log_scale);
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            log_scale += BIG.ln();
        }
    }
    out.extend(scaled.iter().zip(&scales).map(|(&s, &l)| s * l.exp()));
}

/// Uniform grid for quadrature marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// `None` selects `√(2<n>+1) + 5` from the state.
    pub half_width: Option<f64>,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_width: None, points: 2048 }
    }
}

impl GridSpec {
    pub fn default_half_width(n_photon: f64) -> f64 {
        (2.0 * n_photon.max(0.0) + 1.0).sqrt() + 5.0
    }

    pub fn grid(&self, n_photon: f64) -> Vec<f64> {
        let w = self.half_width.unwrap_or_else(|| Self::default_half_width(n_photon));
        let m = self.points.max(2);
        (0..m).map(|i| -w + 2.0 * w * i as f64 / (m - 1) as f64).collect()
    }
}

pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Probability density of `x_φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMarginal {
    pub phi: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

pub const MARGINAL_NORM_TOL: f64 = 1e-6;

/// Precomputed off-diagonal sums `C_d(x) = Σ_n ρ_{n+d,n} ψ_{n+d}(x) ψ_n(x)` on a grid,
/// from which every rotated marginal follows in `O(grid × dim)`.
#[derive(Debug, Clone)]
pub struct MarginalBasis {
    grid: Vec<f64>,
    /// `diagonals[d][i] = C_d(x_i)`.
    diagonals: Vec<Vec<C64>>,
}

impl MarginalBasis {
    pub fn new(rho: &DensityMatrix, grid: Vec<f64>) -> Self {
        let n = rho.dim();
        let mut diagonals = vec![vec![ZERO; grid.len()]; n];
        let mut psi = Vec::with_capacity(n);
        for (i, &x) in grid.iter().enumerate() {
            hermite_functions(x, n, &mut psi);
            for (d, diag) in diagonals.iter_mut().enumerate() {
                let mut acc = ZERO;
                for k in 0..n - d {
                    acc += rho.get(k + d, k) * (psi[k + d] * psi[k]);
                }
                diag[i] = acc;
            }
        }
        Self { grid, diagonals }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Density of `x_φ` without the normalization check.
    pub fn density(&self, phi: f64) -> Vec<f64> {
        let phases: Vec<C64> = (0..self.diagonals.len()).map(|d| C64::from_polar(1.0, -phi * d as f64)).collect();
        (0..self.grid.len())
            .map(|i| {
                let mut p = self.diagonals[0][i].re;
                for d in 1..self.diagonals.len() {
                    p += 2.0 * (phases[d] * self.diagonals[d][i]).re;
                }
                p
            })
            .collect()
    }

    pub fn marginal(&self, phi: f64) -> Result<QuadratureMarginal> {
        let density = self.density(phi);
        let mass = trapezoid(&self.grid, &density);
        let tail = 1.0 - mass;
        if tail.abs() > MARGINAL_NORM_TOL {
            let w = self.grid.last().copied().unwrap_or(0.0);
            return Err(Error::GridTooNarrow { tail_mass: tail, suggested_half_width: w + 3.0 });
        }
        if let Some(&min) = density.iter().min_by(|a, b| a.total_cmp(b)) {
            if min < -PSD_TOL {
                return Err(Error::InvalidState(format!("quadrature density negative ({min:e})")));
            }
        }
        Ok(QuadratureMarginal { phi: phi.rem_euclid(PI), grid: self.grid.clone(), density })
    }
}

pub fn quadrature_marginal(rho: &DensityMatrix, phi: f64, spec: GridSpec) -> Result<QuadratureMarginal> {
    let grid = spec.grid(rho.photon_number());
    MarginalBasis::new(rho, grid).marginal(phi)
}

/// Wigner function `W(α) = (2/π) Tr[ρ D(α) Π D†(α)]` at each grid point.
///
/// Uses the Laguerre expansion of displaced-parity matrix elements, with the
/// normalized functions `√(m!/(m+k)!) B^{k/2} e^{-B/2} L_m^k(B)`, `B = 4|α|²`,
/// generated by their own stable recurrence.
pub fn wigner(rho: &DensityMatrix, alphas: &[C64]) -> Result<Vec<f64>> {
    if rho.tail_mass() > TAIL_TOL {
        return Err(Error::Truncation { dim: rho.dim(), tail_mass: rho.tail_mass() });
    }
    let n = rho.dim();
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let b = 4.0 * alpha.norm_sqr();
            let theta = alpha.arg();
            let mut w = 0.0;
            for k in 0..n {
                let kf = k as f64;
                let log_f0 = if b > 0.0 { 0.5 * kf * b.ln() } else if k == 0 { 0.0 } else { f64::NEG_INFINITY };
                let mut f_prev = 0.0;
                let mut f = (log_f0 - 0.5 * b - 0.5 * ln_factorial(k)).exp();
                let rot = C64::from_polar(1.0, kf * theta);
                let mut row_sum = 0.0;
                for m in 0..n - k {
                    let mf = m as f64;
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    if k == 0 {
                        row_sum += sign * f * rho.get(m, m).re;
                    } else {
                        row_sum += 2.0 * sign * f * (rho.get(m, m + k) * rot).re;
                    }
                    let next = ((2.0 * mf + 1.0 + kf - b) * f - (mf * (mf + kf)).sqrt() * f_prev)
                        / ((mf + 1.0) * (mf + 1.0 + kf)).sqrt();
                    f_prev = f;
                    f = next;
                }
                w += row_sum;
            }
            2.0 / PI * w
        })
        .collect())
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}
