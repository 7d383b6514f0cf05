//! SQUID-terminated resonator as a flux magnetometer, and dispersive qubit
//! readout by discriminating the two conditional steady states.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrimination::discriminate;
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, GridSpec, SystemParams};
use crate::liouvillian::{steady_state, steady_state_adaptive, Truncation};
use crate::sweep::{Axis, SweepResult};

pub const POLE_GUARD: f64 = 1e-6;
pub const DEFAULT_SCALING_C: f64 = 0.55;
pub const OPERATING_FLUX: f64 = FRAC_PI_4;
/// Upper end of `χ/Γ` where `𝒮 ≃ c/(χΓ)` has been established.
pub const SCALING_REGIME_MAX: f64 = 1e-2;
/// Prefactor of the sensitivity bound `6.5 √(γ₀χ₀)/ω_{λ/4}`.
pub const BOUND_PREFACTOR: f64 = 6.5;
/// The prefactor is quoted to two significant figures.
pub const BOUND_ROUNDING: f64 = 0.05;
pub const GAMMA0_MAX: f64 = 0.05;

fn check_flux(phi: f64) -> Result<f64> {
    let c = phi.cos();
    if !phi.is_finite() || c.abs() < POLE_GUARD {
        return Err(Error::InvalidParameter { name: "phi", value: phi, reason: "too close to the pole at cos Φ = 0" });
    }
    Ok(c)
}

/// `ω_r(Φ) = ω_{λ/4}/(1 + γ₀/|cos Φ|)` and `∂ω_r/∂Φ`.
pub fn flux_to_frequency(phi: f64, gamma0: f64, omega_l4: f64) -> Result<(f64, f64)> {
    let c = check_flux(phi)?;
    let value = omega_l4 / (1.0 + gamma0 / c.abs());
    let derivative = -gamma0 * omega_l4 * phi.sin() * c.signum() / (gamma0 + c.abs()).powi(2);
    Ok((value, derivative))
}

/// `χ(Φ) = χ₀γ₀³/|cos³Φ|`.
pub fn flux_to_chi(phi: f64, gamma0: f64, chi0: f64) -> Result<f64> {
    let c = check_flux(phi)?;
    Ok(chi0 * gamma0.powi(3) / c.abs().powi(3))
}

/// Device parameters. Rates are angular frequencies in rad/s; `duration` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerParams {
    pub gamma0: f64,
    pub chi0: f64,
    pub omega_l4: f64,
    pub gamma: f64,
    pub duration: f64,
}

impl Default for MagnetometerParams {
    fn default() -> Self {
        Self { gamma0: 0.05, chi0: 2.0 * PI * 100e6, omega_l4: 2.0 * PI * 10e9, gamma: 2.0 * PI * 4e6, duration: 1.0 }
    }
}

impl MagnetometerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("chi0", self.chi0), ("omega_l4", self.omega_l4), ("gamma", self.gamma), ("duration", self.duration)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter { name, value: v, reason: "must be positive and finite" });
            }
        }
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(Error::InvalidParameter { name: "gamma0", value: self.gamma0, reason: "must be positive" });
        }
        Ok(())
    }
}

/// Inputs, intermediates and result of the sensitivity pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerReport {
    pub params: MagnetometerParams,
    pub c: f64,
    pub phi: f64,
    pub omega_r: f64,
    pub chi: f64,
    pub chi_over_gamma: f64,
    /// `𝒮 = c/(χΓ)`.
    pub snr: f64,
    /// Independent measurements per second, `Γ/(4π)`.
    pub measurements_per_second: f64,
    pub domega_dphi: f64,
    /// Flux uncertainty after `duration`.
    pub delta_phi: f64,
    /// `ΔΦ·√T`, in flux units per √Hz.
    pub sensitivity: f64,
    pub closed_form: f64,
    pub bound: f64,
    pub bound_respected: bool,
    /// Whether `χ/Γ` lies where the `c/(χΓ)` law was fitted and `γ₀ ≤ 0.05`.
    pub validated: bool,
}

/// `2^{1/4}√(π/c)(2γ₀+√2)²√(γ₀χ₀)/ω_{λ/4}`.
pub fn closed_form_sensitivity(gamma0: f64, chi0: f64, omega_l4: f64, c: f64) -> f64 {
    2f64.powf(0.25) * (PI / c).sqrt() * (2.0 * gamma0 + SQRT_2).powi(2) * (gamma0 * chi0).sqrt() / omega_l4
}

pub fn magnetometer_sensitivity(mp: &MagnetometerParams, c: f64) -> Result<MagnetometerReport> {
    mp.validate()?;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter { name: "c", value: c, reason: "must be positive" });
    }
    let phi = OPERATING_FLUX;
    let (omega_r, domega_dphi) = flux_to_frequency(phi, mp.gamma0, mp.omega_l4)?;
    let chi = flux_to_chi(phi, mp.gamma0, mp.chi0)?;
    let chi_over_gamma = chi / mp.gamma;
    let snr = c / (chi * mp.gamma);
    let measurements_per_second = mp.gamma / (4.0 * PI);
    let m = measurements_per_second * mp.duration;
    let delta_phi = 1.0 / ((snr * m).sqrt() * domega_dphi.abs());
    let sensitivity = delta_phi * mp.duration.sqrt();
    let closed_form = closed_form_sensitivity(mp.gamma0, mp.chi0, mp.omega_l4, c);
    let bound = BOUND_PREFACTOR * (mp.gamma0 * mp.chi0).sqrt() / mp.omega_l4;
    let validated = chi_over_gamma <= SCALING_REGIME_MAX && mp.gamma0 <= GAMMA0_MAX;
    if !validated {
        warn!("χ/Γ = {chi_over_gamma:e}, γ₀ = {}: outside the validated regime", mp.gamma0);
    }
    Ok(MagnetometerReport {
        params: *mp,
        c,
        phi,
        omega_r,
        chi,
        chi_over_gamma,
        snr,
        measurements_per_second,
        domega_dphi,
        delta_phi,
        sensitivity,
        closed_form,
        bound,
        bound_respected: closed_form <= bound * (1.0 + BOUND_ROUNDING / BOUND_PREFACTOR),
        validated,
    })
}

/// Dispersive coupling in units of `Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// `δω = g²/Δ`.
    pub delta_omega: f64,
    pub g: f64,
}

impl ReadoutParams {
    /// Qubit-resonator detuning `Δ = g²/δω`.
    pub fn detuning(&self) -> f64 {
        self.g * self.g / self.delta_omega
    }

    /// `η = N δω²/(4g²)`.
    pub fn eta(&self, n: f64) -> f64 {
        n * self.delta_omega.powi(2) / (4.0 * self.g * self.g)
    }
}

pub const ETA_WARN: f64 = 0.05;
pub const ETA_MAX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    pub g: f64,
    pub truncation: Truncation,
    pub grid: GridSpec,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self { g: 100.0, truncation: Truncation { min_dim: 120, ..Truncation::default() }, grid: GridSpec::default() }
    }
}

/// Resonator steady states conditioned on the qubit: `g` at `ω`, `e` at `ω + δω`.
#[derive(Debug, Clone)]
pub struct ReadoutPair {
    pub rho_g: DensityMatrix,
    pub rho_e: DensityMatrix,
    pub n_g: f64,
    pub n_e: f64,
    pub eta: f64,
}

fn pair_unchecked(base: &SystemParams, rp: &ReadoutParams, trunc: &Truncation) -> Result<ReadoutPair> {
    let g = steady_state_adaptive(base, trunc)?;
    let shifted = base.with_omega(base.omega + rp.delta_omega);
    let e = steady_state_adaptive(&shifted, trunc)?;
    let dim = g.dim().max(e.dim());
    let rho_g = if g.dim() == dim { g } else { steady_state(base, dim)? };
    let rho_e = if e.dim() == dim { e } else { steady_state(&shifted, dim)? };
    let (n_g, n_e) = (rho_g.photon_number(), rho_e.photon_number());
    Ok(ReadoutPair { eta: rp.eta(n_g.max(n_e)), rho_g, rho_e, n_g, n_e })
}

/// Both conditional steady states at a shared truncation.
pub fn readout_steady_pair(base: &SystemParams, rp: &ReadoutParams, trunc: &Truncation) -> Result<ReadoutPair> {
    let pair = pair_unchecked(base, rp, trunc)?;
    if pair.eta > ETA_MAX {
        return Err(Error::InvalidParameter { name: "eta", value: pair.eta, reason: "dispersive approximation requires eta <= 0.1" });
    }
    if pair.eta > ETA_WARN {
        warn!("η = {} above {ETA_WARN}: dispersive approximation marginal", pair.eta);
    }
    Ok(pair)
}

/// Helstrom and optimized homodyne errors over a `(δω, ε)` grid. `η` is stored
/// everywhere; points with `η > 0.1` keep their errors but are marked invalid.
pub fn readout_map(deltas: &[f64], epsilons: &[f64], chi: f64, omega: f64, cfg: &ReadoutConfig) -> Result<SweepResult> {
    SystemParams::new(omega, 0.0, chi, 1.0)?;
    let grid: Vec<(f64, f64)> = deltas.iter().flat_map(|&d| epsilons.iter().map(move |&e| (d, e))).collect();
    let rows: Vec<Result<[f64; 8]>> = grid
        .par_iter()
        .map(|&(d, e)| {
            let base = SystemParams::new(omega, e, chi, 1.0)?;
            let pair = pair_unchecked(&base, &ReadoutParams { delta_omega: d, g: cfg.g }, &cfg.truncation)?;
            let r = discriminate(&pair.rho_e, &pair.rho_g, cfg.grid)?;
            let valid = if pair.eta <= ETA_MAX { 1.0 } else { 0.0 };
            Ok([r.p_err_opt, r.p_err_hom, r.phi_opt, pair.eta, pair.n_g, pair.n_e, pair.rho_g.dim() as f64, valid])
        })
        .collect();
    let names = ["p_opt", "p_hom", "phi_opt", "eta", "n_g", "n_e", "dim_used", "dispersive_valid"];
    let mut fields = vec![Vec::with_capacity(grid.len()); names.len()];
    let mut failures = 0usize;
    for ((d, e), r) in grid.iter().zip(rows) {
        let row = r.unwrap_or_else(|err| {
            warn!("δω = {d}, ε = {e}: {err}");
            failures += 1;
            [f64::NAN; 8]
        });
        for (f, v) in fields.iter_mut().zip(row) {
            f.push(v);
        }
    }
    let mut out = SweepResult::new(vec![
        Axis { name: "delta_omega".into(), values: deltas.to_vec() },
        Axis { name: "epsilon".into(), values: epsilons.to_vec() },
    ]);
    for (name, f) in names.iter().zip(fields) {
        out.insert(name, f)?;
    }
    out.metadata.insert("omega".into(), serde_json::json!(omega));
    out.metadata.insert("chi".into(), serde_json::json!(chi));
    out.metadata.insert("gamma".into(), serde_json::json!(1.0));
    out.metadata.insert("g".into(), serde_json::json!(cfg.g));
    out.metadata.insert("grid_points".into(), serde_json::json!(cfg.grid.points));
    out.metadata.insert("tail_tol".into(), serde_json::json!(cfg.truncation.tail_tol));
    out.metadata.insert("failed_points".into(), serde_json::json!(failures));
    out.metadata.insert("partial".into(), serde_json::json!(failures > 0));
    Ok(out)
}

/// Whether `η` is nondecreasing in `ε` along every `δω` row of a map.
pub fn eta_monotone_rows(map: &SweepResult) -> bool {
    let Some(eta) = map.field("eta") else { return false };
    let Some(cols) = map.axes.get(1).map(|a| a.values.len()) else { return false };
    eta.chunks(cols).all(|row| row.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)))
}

/// Readout errors at one point of an `η` contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub delta_omega: f64,
    pub epsilon: f64,
    pub n_g: f64,
    pub n_e: f64,
    pub eta: f64,
    pub p_opt: f64,
    pub p_hom: f64,
    pub phi_opt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutContour {
    pub eta: f64,
    pub chi: f64,
    pub omega: f64,
    pub points: Vec<ContourPoint>,
}

impl ReadoutContour {
    fn argmin(&self, f: impl Fn(&ContourPoint) -> f64) -> Option<usize> {
        (0..self.points.len()).min_by(|&a, &b| f(&self.points[a]).total_cmp(&f(&self.points[b])))
    }

    pub fn best_optimal(&self) -> Option<&ContourPoint> {
        self.argmin(|p| p.p_opt).map(|k| &self.points[k])
    }

    pub fn best_homodyne(&self) -> Option<&ContourPoint> {
        self.argmin(|p| p.p_hom).map(|k| &self.points[k])
    }

    /// Index distance between the two minimizers along the contour.
    pub fn minimizer_offset(&self) -> Option<usize> {
        Some(self.argmin(|p| p.p_opt)?.abs_diff(self.argmin(|p| p.p_hom)?))
    }
}

/// Drive at which the unshifted branch holds `n_target` photons, by bisection
/// on the monotone `N_g(ε)`.
pub fn epsilon_for_photon_number(omega: f64, chi: f64, n_target: f64, trunc: &Truncation) -> Result<f64> {
    let n_at = |e: f64| -> Result<f64> { Ok(steady_state_adaptive(&SystemParams::new(omega, e, chi, 1.0)?, trunc)?.photon_number()) };
    let (mut lo, mut hi) = (0.0, f64::hypot(omega, 1.0));
    while n_at(hi)? < n_target {
        lo = hi;
        hi *= 1.5;
        if hi > 1e3 {
            return Err(Error::InvalidParameter { name: "n_target", value: n_target, reason: "not reachable" });
        }
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if n_at(mid)? < n_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Readout errors along the `η = eta` line, one point per `δω`, with the
/// unshifted branch carrying `N = 4g²η/δω²` photons.
pub fn readout_contour(deltas: &[f64], eta: f64, chi: f64, omega: f64, cfg: &ReadoutConfig) -> Result<ReadoutContour> {
    let points = deltas
        .par_iter()
        .map(|&d| {
            let rp = ReadoutParams { delta_omega: d, g: cfg.g };
            let n_target = 4.0 * cfg.g * cfg.g * eta / (d * d);
            let epsilon = epsilon_for_photon_number(omega, chi, n_target, &cfg.truncation)?;
            let pair = readout_steady_pair(&SystemParams::new(omega, epsilon, chi, 1.0)?, &rp, &cfg.truncation)?;
            let r = discriminate(&pair.rho_e, &pair.rho_g, cfg.grid)?;
            Ok(ContourPoint {
                delta_omega: d,
                epsilon,
                n_g: pair.n_g,
                n_e: pair.n_e,
                eta: pair.eta,
                p_opt: r.p_err_opt,
                p_hom: r.p_err_hom,
                phi_opt: r.phi_opt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReadoutContour { eta, chi, omega, points })
}
