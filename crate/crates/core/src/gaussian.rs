//! Closed-form Gaussian physics of the linearized resonator.
//!
//! Covariances use `σ_ij = <{r_i, r_j}> − 2<r_i><r_j>` with `r = (x, p)`, so the
//! vacuum has `σ = I`. The homodyne variance of `x_φ = cos φ x + sin φ p` is
//! `s(φ)/2` with `s(φ) = cos²φ σ₁₁ + sin²φ σ₂₂ + sin 2φ σ₁₂`.

use log::debug;

use crate::error::{Error, Result};

/// Threshold on `1 − μ⁴` below which the purity term of the covariance QFI is dropped.
pub const PURE_STATE_GUARD: f64 = 1e-10;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub sigma: Mat2,
    pub displacement: num_complex::Complex64,
}

pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

impl GaussianState {
    /// `μ = (det σ)^{-1/2}`.
    pub fn purity(&self) -> f64 {
        det2(&self.sigma).powf(-0.5)
    }

    /// `σ + iΩ ≥ 0`, i.e. positive diagonal and `det σ ≥ 1`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.sigma[0][0] > 0.0 && det2(&self.sigma) >= 1.0 - tol
    }

    /// Twice the variance of `x_φ`.
    pub fn rotated_variance(&self, phi: f64) -> f64 {
        rotated(&self.sigma, phi)
    }

    pub fn photon_number(&self) -> f64 {
        (self.sigma[0][0] + self.sigma[1][1] - 2.0) / 4.0 + self.displacement.norm_sqr()
    }
}

fn rotated(s: &Mat2, phi: f64) -> f64 {
    let (sn, cs) = phi.sin_cos();
    cs * cs * s[0][0] + sn * sn * s[1][1] + (2.0 * phi).sin() * s[0][1]
}

fn require_normal(omega: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    let ec2 = omega * omega + gamma * gamma;
    if epsilon * epsilon >= ec2 {
        return Err(Error::Phase("no normal-phase steady state for epsilon >= eps_c"));
    }
    Ok(ec2)
}

/// Steady-state covariance of the linearized model below threshold.
pub fn normal_covariance(omega: f64, epsilon: f64, gamma: f64) -> Result<GaussianState> {
    let ec2 = require_normal(omega, epsilon, gamma)?;
    let d = ec2 - epsilon * epsilon;
    let sigma = [
        [(ec2 - omega * epsilon) / d, -gamma * epsilon / d],
        [-gamma * epsilon / d, (ec2 + omega * epsilon) / d],
    ];
    Ok(GaussianState { sigma, displacement: num_complex::Complex64::new(0.0, 0.0) })
}

/// `∂σ/∂ω` of [`normal_covariance`].
pub fn normal_covariance_derivative(omega: f64, epsilon: f64, gamma: f64) -> Result<Mat2> {
    let ec2 = require_normal(omega, epsilon, gamma)?;
    let d = ec2 - epsilon * epsilon;
    let m = [[ec2 - omega * epsilon, -gamma * epsilon], [-gamma * epsilon, ec2 + omega * epsilon]];
    let dm = [[2.0 * omega - epsilon, 0.0], [0.0, 2.0 * omega + epsilon]];
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = dm[i][j] / d - 2.0 * omega * m[i][j] / (d * d);
        }
    }
    Ok(out)
}

/// Frobenius norm of `Bσ + σBᵀ − 2Γ(σ − I)` with `B = [[0, ω−ε], [−(ω+ε), 0]]`.
pub fn lyapunov_residual(omega: f64, epsilon: f64, gamma: f64, sigma: &Mat2) -> f64 {
    let b = [[0.0, omega - epsilon], [-(omega + epsilon), 0.0]];
    let mut acc: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut v = 0.0;
            for k in 0..2 {
                v += b[i][k] * sigma[k][j] + sigma[i][k] * b[j][k];
            }
            let id = if i == j { 1.0 } else { 0.0 };
            v -= 2.0 * gamma * (sigma[i][j] - id);
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// `N = ε²/[2(ε_c² − ε²)]`.
pub fn gaussian_photon_number(omega: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    let ec2 = require_normal(omega, epsilon, gamma)?;
    Ok(epsilon * epsilon / (2.0 * (ec2 - epsilon * epsilon)))
}

/// Small-χ quantum Fisher information for `ω` below threshold,
/// `[2N + 8ω²N²/ε²]/(2ε_c² − ε²)`.
pub fn gaussian_qfi(omega: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    let ec2 = require_normal(omega, epsilon, gamma)?;
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    let n = gaussian_photon_number(omega, epsilon, gamma)?;
    Ok((2.0 * n + 8.0 * omega * omega * n * n / (epsilon * epsilon)) / (2.0 * ec2 - epsilon * epsilon))
}

/// Gaussian QFI from the covariance, its derivative, the purity `μ` and `∂μ`:
/// `Tr[(σ⁻¹∂σ)²]/(2(1+μ²)) + 2(∂μ)²/(1−μ⁴)`.
pub fn gaussian_qfi_from_covariance(sigma: &Mat2, dsigma: &Mat2, mu: f64, dmu: f64) -> Result<f64> {
    if mu > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter { name: "mu", value: mu, reason: "purity above 1 is unphysical" });
    }
    let det = det2(sigma);
    let inv = [[sigma[1][1] / det, -sigma[0][1] / det], [-sigma[1][0] / det, sigma[0][0] / det]];
    let mut prod = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            prod[i][j] = inv[i][0] * dsigma[0][j] + inv[i][1] * dsigma[1][j];
        }
    }
    let tr_sq = prod[0][0] * prod[0][0] + 2.0 * prod[0][1] * prod[1][0] + prod[1][1] * prod[1][1];
    let mut qfi = tr_sq / (2.0 * (1.0 + mu * mu));
    let gap = 1.0 - mu.powi(4);
    if gap > PURE_STATE_GUARD {
        qfi += 2.0 * dmu * dmu / gap;
    } else {
        debug!("purity term dropped (1 - mu^4 = {gap:e})");
    }
    Ok(qfi.max(0.0))
}

/// `μ` and `∂μ` for a covariance and its derivative.
pub fn purity_and_derivative(sigma: &Mat2, dsigma: &Mat2) -> (f64, f64) {
    let det = det2(sigma);
    let ddet = sigma[1][1] * dsigma[0][0] + sigma[0][0] * dsigma[1][1] - sigma[0][1] * dsigma[1][0] - sigma[1][0] * dsigma[0][1];
    let mu = det.powf(-0.5);
    (mu, -0.5 * det.powf(-1.5) * ddet)
}

/// [`gaussian_qfi_from_covariance`] evaluated on the analytic steady state.
pub fn gaussian_qfi_covariance_form(omega: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    let s = normal_covariance(omega, epsilon, gamma)?.sigma;
    let ds = normal_covariance_derivative(omega, epsilon, gamma)?;
    let (mu, dmu) = purity_and_derivative(&s, &ds);
    gaussian_qfi_from_covariance(&s, &ds, mu, dmu)
}

/// Homodyne Fisher information `(∂_ω s)²/(2 s²)` of `x_φ` in the Gaussian limit.
pub fn gaussian_fi_homodyne(omega: f64, epsilon: f64, gamma: f64, phi: f64) -> Result<f64> {
    let s = normal_covariance(omega, epsilon, gamma)?.rotated_variance(phi);
    let ds = rotated(&normal_covariance_derivative(omega, epsilon, gamma)?, phi);
    Ok(ds * ds / (2.0 * s * s))
}

/// The homodyne angle maximizing [`gaussian_fi_homodyne`] at `ω = 0`:
/// `sin 2φ = ε/ε_c` in this quadrature convention.
pub fn gaussian_homodyne_angle_at_zero_detuning(epsilon: f64, gamma: f64) -> f64 {
    0.5 * (epsilon / gamma).clamp(-1.0, 1.0).asin()
}

/// Displaced solutions of the mean-field equations above threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrokenPhaseSolution {
    pub alpha_sq: f64,
    /// The two displacement phases, `π` apart.
    pub phi: [f64; 2],
    pub omega_prime: f64,
    pub eps_prime_mod: f64,
    pub theta: f64,
}

impl BrokenPhaseSolution {
    pub fn alphas(&self) -> [num_complex::Complex64; 2] {
        let r = self.alpha_sq.sqrt();
        self.phi.map(|p| num_complex::Complex64::from_polar(r, p))
    }
}

/// `|ωα + εα* + 2χ|α|²α − iΓα|`.
pub fn fixed_point_residual(omega: f64, epsilon: f64, chi: f64, gamma: f64, alpha: num_complex::Complex64) -> f64 {
    let i = num_complex::Complex64::new(0.0, 1.0);
    (alpha * omega + alpha.conj() * epsilon + alpha * (2.0 * chi * alpha.norm_sqr()) - i * gamma * alpha).norm()
}

pub fn broken_phase_solution(omega: f64, epsilon: f64, chi: f64, gamma: f64) -> Result<BrokenPhaseSolution> {
    let ec = omega.hypot(gamma);
    if epsilon <= ec {
        return Err(Error::Phase("normal phase: no symmetry-broken solution for epsilon <= eps_c"));
    }
    if chi <= 0.0 {
        return Err(Error::InvalidParameter { name: "chi", value: chi, reason: "broken phase needs chi > 0" });
    }
    let root = (epsilon * epsilon - gamma * gamma).sqrt();
    let alpha_sq = (root - omega) / (2.0 * chi);
    let base = 0.5 * (gamma / epsilon).asin();
    let phi = [base + 0.5 * std::f64::consts::PI, base - 0.5 * std::f64::consts::PI];
    let theta = -2.0 * (gamma * (root - omega) / (epsilon * ec + omega * root + gamma * gamma)).atan();
    Ok(BrokenPhaseSolution { alpha_sq, phi, omega_prime: 2.0 * root - omega, eps_prime_mod: ec, theta })
}

/// Photon-number signal-to-noise ratio in the broken phase, `1/(2χ[√(ε²−Γ²) − ω])`.
pub fn photon_number_snr(omega: f64, epsilon: f64, chi: f64, gamma: f64) -> Result<f64> {
    let b = broken_phase_solution(omega, epsilon, chi, gamma)?;
    Ok(1.0 / (4.0 * chi * chi * b.alpha_sq))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: x.len() });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Log-log slope of the photon-number SNR against `ε` over pumps `ratios · ε_c`.
pub fn broken_phase_qfi_scaling(omega: f64, chi: f64, gamma: f64, ratios: &[f64]) -> Result<f64> {
    let ec = omega.hypot(gamma);
    let eps: Vec<f64> = ratios.iter().map(|r| r * ec).collect();
    let snr = eps.iter().map(|&e| photon_number_snr(omega, e, chi, gamma)).collect::<Result<Vec<_>>>()?;
    log_log_slope(&eps, &snr)
}
