//! Frequency estimation on the full steady state: homodyne and heterodyne
//! signal-to-noise ratios, the fidelity-based quantum Fisher information, and
//! their optimization over the quadrature angle and the drive.

use std::f64::consts::PI;

use log::{debug, warn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, Moments, SystemParams};
use crate::gaussian::log_log_slope;
use crate::liouvillian::{steady_state, steady_state_from, Truncation};
use crate::numerics::golden_section_max;
use crate::sweep::{Axis, SweepResult};

pub const DEGENERATE_VARIANCE: f64 = 1e-14;
pub const PHASE_SCAN_POINTS: usize = 64;
pub const PHASE_TOL: f64 = 1e-4;
pub const EPSILON_SCAN_POINTS: usize = 15;
pub const EPSILON_TOL: f64 = 1e-3;

/// Finite-difference schedule and truncation policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetrologyConfig {
    pub dw_start: f64,
    pub dw_floor: f64,
    /// Relative change between successive step sizes accepted as converged.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub truncation: Truncation,
}

impl Default for MetrologyConfig {
    fn default() -> Self {
        Self { dw_start: 1e-2, dw_floor: 1e-4, rel_tol: 3e-3, abs_tol: 1e-10, truncation: Truncation::default() }
    }
}

impl MetrologyConfig {
    /// Halving sequence from `dw_start` down to `dw_floor`, in units of `Γ`.
    pub fn steps(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut dw = self.dw_start;
        while dw >= self.dw_floor * (1.0 - 1e-12) {
            out.push(dw * gamma);
            dw *= 0.5;
        }
        out
    }

    fn converged(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() <= self.rel_tol * cur.abs().max(prev.abs()) + self.abs_tol
    }
}

/// Derivative of the moments entering the homodyne and heterodyne SNRs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentDerivative {
    pub dn: f64,
    pub da2: C64,
}

impl MomentDerivative {
    pub fn central(plus: &Moments, minus: &Moments, dw: f64) -> Self {
        Self { dn: (plus.n - minus.n) / (2.0 * dw), da2: (plus.a2 - minus.a2) / (2.0 * dw) }
    }

    fn norm(&self) -> f64 {
        self.dn.abs() + self.da2.norm()
    }

    /// `∂⟨x_φ²⟩`.
    pub fn quadrature(&self, phi: f64) -> f64 {
        (C64::from_polar(1.0, -2.0 * phi) * self.da2).re + self.dn
    }
}

/// `S(φ) = (∂⟨x_φ²⟩)² / Var(x_φ²)` as a function of the angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneLandscape {
    pub moments: Moments,
    pub derivative: MomentDerivative,
}

impl HomodyneLandscape {
    pub fn from_states(center: &DensityMatrix, minus: &DensityMatrix, plus: &DensityMatrix, dw: f64) -> Self {
        Self { moments: center.moments(), derivative: MomentDerivative::central(&plus.moments(), &minus.moments(), dw) }
    }

    pub fn snr(&self, phi: f64) -> Result<f64> {
        let (x2, x4) = self.moments.quadrature(phi);
        let variance = x4 - x2 * x2;
        if variance < DEGENERATE_VARIANCE {
            return Err(Error::DegenerateVariance { variance });
        }
        Ok(self.derivative.quadrature(phi).powi(2) / variance)
    }

    /// Scan of `[0, π)` followed by golden-section refinement around the best sample.
    pub fn maximize(&self) -> (f64, f64) {
        let f = |phi: f64| Ok::<_, Error>(self.snr(phi).unwrap_or(0.0));
        let step = PI / PHASE_SCAN_POINTS as f64;
        let (k, best) = (0..PHASE_SCAN_POINTS)
            .map(|k| (k, f(k as f64 * step).unwrap_or(0.0)))
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        if best <= 0.0 {
            return (0.0, 0.0);
        }
        let centre = k as f64 * step;
        let (phi, value) = golden_section_max(f, centre - step, centre + step, PHASE_TOL).unwrap_or((centre, best));
        let (phi, value) = if value >= best { (phi, value) } else { (centre, best) };
        (phi.rem_euclid(PI), value)
    }
}

/// `S^Het = (∂⟨a a†⟩)² / (⟨a² a†²⟩ − ⟨a a†⟩²)`.
pub fn heterodyne_snr_from(moments: &Moments, derivative: &MomentDerivative) -> Result<f64> {
    let an = moments.anti_normal();
    let variance = moments.a2_adag2 - an * an;
    if variance < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateVariance { variance });
    }
    Ok(derivative.dn.powi(2) / variance)
}

/// `(∂⟨n⟩)² / Var(n)`, the SNR of a photon-number measurement.
pub fn photon_number_snr_from(moments: &Moments, derivative: &MomentDerivative) -> Result<f64> {
    let n2 = 0.25 * (moments.k_sq - 4.0 * moments.n - 1.0);
    let variance = n2 - moments.n * moments.n;
    if variance < DEGENERATE_VARIANCE {
        return Err(Error::DegenerateVariance { variance });
    }
    Ok(derivative.dn.powi(2) / variance)
}

pub fn snr_photon_number(p: &SystemParams, cfg: &MetrologyConfig) -> Result<f64> {
    let a = analyze(p, cfg, Needs { derivative: true, qfi: false, forward: false })?;
    let (d, _) = a.derivative.expect("derivative requested");
    photon_number_snr_from(&a.center.moments(), &d)
}

/// Converged fidelity-based QFI and the step it was accepted at.
#[derive(Debug, Clone, PartialEq)]
pub struct QfiEstimate {
    pub value: f64,
    pub dw: f64,
    pub estimates: Vec<f64>,
}

/// Which shifted states a local analysis must produce.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Needs {
    derivative: bool,
    qfi: bool,
    /// Compare against `ω + dω` instead of `ω − dω`.
    forward: bool,
}

/// Steady state at `ω` with its finite-difference neighbourhood.
#[derive(Debug, Clone)]
pub struct LocalAnalysis {
    pub center: DensityMatrix,
    pub derivative: Option<(MomentDerivative, f64)>,
    pub qfi: Option<QfiEstimate>,
}

impl LocalAnalysis {
    pub fn landscape(&self) -> Option<HomodyneLandscape> {
        self.derivative.map(|(d, _)| HomodyneLandscape { moments: self.center.moments(), derivative: d })
    }
}

fn analyze(p: &SystemParams, cfg: &MetrologyConfig, needs: Needs) -> Result<LocalAnalysis> {
    p.validate()?;
    let trunc = cfg.truncation;
    let steps = cfg.steps(p.gamma);
    let mut start = trunc.initial_dim(p);
    'restart: loop {
        let center = steady_state_from(p, &trunc, start)?;
        let dim = center.dim();
        let mut derivative: Option<(MomentDerivative, f64)> = None;
        let mut prev_d: Option<MomentDerivative> = None;
        let mut qfi: Option<QfiEstimate> = None;
        let mut raw: Vec<f64> = Vec::new();
        let mut extrapolated: Vec<f64> = Vec::new();
        for &dw in &steps {
            let want_d = needs.derivative && derivative.is_none();
            let want_q = needs.qfi && qfi.is_none();
            if !want_d && !want_q {
                break;
            }
            let minus = if want_d || (want_q && !needs.forward) { Some(steady_state(&p.with_omega(p.omega - dw), dim)?) } else { None };
            let plus = if want_d || (want_q && needs.forward) { Some(steady_state(&p.with_omega(p.omega + dw), dim)?) } else { None };
            for s in minus.iter().chain(plus.iter()) {
                if s.tail_mass() > trunc.tail_tol {
                    if dim >= trunc.max_dim {
                        return Err(Error::Truncation { dim, tail_mass: s.tail_mass() });
                    }
                    start = (dim + dim / 2).min(trunc.max_dim);
                    debug!("shifted state needs a larger truncation, restarting at {start}");
                    continue 'restart;
                }
            }
            if want_d {
                let (m, pl) = (minus.as_ref().expect("minus computed"), plus.as_ref().expect("plus computed"));
                let d = MomentDerivative::central(&pl.moments(), &m.moments(), dw);
                if let Some(prev) = prev_d {
                    let diff = MomentDerivative { dn: d.dn - prev.dn, da2: d.da2 - prev.da2 };
                    if diff.norm() <= cfg.rel_tol * d.norm() + cfg.abs_tol {
                        derivative = Some((d, dw));
                    }
                }
                prev_d = Some(d);
            }
            if want_q {
                let other = if needs.forward { plus.as_ref() } else { minus.as_ref() }.expect("neighbour computed");
                let q = 8.0 * (1.0 - center.root_fidelity(other)?) / (dw * dw);
                if let Some(&last) = raw.last() {
                    let r = 2.0 * q - last;
                    if let Some(&last_r) = extrapolated.last() {
                        if cfg.converged(last_r, r) {
                            qfi = Some(QfiEstimate { value: r.max(0.0), dw, estimates: Vec::new() });
                        }
                    }
                    if qfi.is_none() && cfg.converged(last, q) {
                        qfi = Some(QfiEstimate { value: q.max(0.0), dw, estimates: Vec::new() });
                    }
                    extrapolated.push(r);
                }
                raw.push(q);
            }
        }
        if needs.derivative && derivative.is_none() {
            return Err(Error::NoConvergence { what: "moment derivative", estimates: prev_d.map(|d| vec![d.dn, d.da2.re, d.da2.im]).unwrap_or_default() });
        }
        if needs.qfi && qfi.is_none() {
            return Err(Error::NoConvergence { what: "fidelity QFI", estimates: raw });
        }
        if let Some(est) = qfi.as_mut() {
            est.estimates = raw;
        }
        return Ok(LocalAnalysis { center, derivative, qfi });
    }
}

/// Local analysis with both the moment derivatives and the QFI.
pub fn local_analysis(p: &SystemParams, cfg: &MetrologyConfig) -> Result<LocalAnalysis> {
    analyze(p, cfg, Needs { derivative: true, qfi: true, forward: false })
}

pub fn snr_homodyne(p: &SystemParams, phi: f64, cfg: &MetrologyConfig) -> Result<f64> {
    let a = analyze(p, cfg, Needs { derivative: true, qfi: false, forward: false })?;
    a.landscape().expect("derivative requested").snr(phi)
}

pub fn snr_heterodyne(p: &SystemParams, cfg: &MetrologyConfig) -> Result<f64> {
    let a = analyze(p, cfg, Needs { derivative: true, qfi: false, forward: false })?;
    let (d, _) = a.derivative.expect("derivative requested");
    heterodyne_snr_from(&a.center.moments(), &d)
}

/// `I_ω = lim 8(1 − √F(ρ_ω, ρ_{ω−dω}))/dω²` over the configured step sequence.
pub fn qfi_numeric(p: &SystemParams, cfg: &MetrologyConfig) -> Result<QfiEstimate> {
    qfi_numeric_directed(p, cfg, false)
}

/// As [`qfi_numeric`], comparing with `ρ_{ω+dω}` when `forward` is set.
pub fn qfi_numeric_directed(p: &SystemParams, cfg: &MetrologyConfig, forward: bool) -> Result<QfiEstimate> {
    Ok(analyze(p, cfg, Needs { derivative: false, qfi: true, forward })?.qfi.expect("qfi requested"))
}

/// `(φ*, S*)` for the homodyne SNR.
pub fn maximize_over_phase(p: &SystemParams, cfg: &MetrologyConfig) -> Result<(f64, f64)> {
    let a = analyze(p, cfg, Needs { derivative: true, qfi: false, forward: false })?;
    Ok(a.landscape().expect("derivative requested").maximize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub params: SystemParams,
    pub phi_opt: f64,
    pub snr_hom: f64,
    pub snr_het: f64,
    pub qfi: f64,
    pub photon_number: f64,
    pub dim: usize,
    pub dw_snr: f64,
    pub dw_qfi: f64,
}

impl SnrPoint {
    /// Both SNRs bounded by the QFI up to a relative slack.
    pub fn hierarchy_holds(&self, slack: f64) -> bool {
        let bound = self.qfi * (1.0 + slack) + 1e-12;
        self.snr_hom <= bound && self.snr_het <= bound
    }
}

pub fn evaluate_point(p: &SystemParams, cfg: &MetrologyConfig) -> Result<SnrPoint> {
    let a = local_analysis(p, cfg)?;
    let (d, dw_snr) = a.derivative.expect("derivative requested");
    let moments = a.center.moments();
    let (phi_opt, snr_hom) = HomodyneLandscape { moments, derivative: d }.maximize();
    let qfi = a.qfi.expect("qfi requested");
    Ok(SnrPoint {
        params: *p,
        phi_opt,
        snr_hom,
        snr_het: heterodyne_snr_from(&moments, &d)?,
        qfi: qfi.value,
        photon_number: moments.n,
        dim: a.center.dim(),
        dw_snr,
        dw_qfi: qfi.dw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Homodyne,
    Qfi,
}

impl Objective {
    pub fn of(&self, point: &SnrPoint) -> f64 {
        match self {
            Self::Homodyne => point.snr_hom,
            Self::Qfi => point.qfi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonMax {
    pub objective: Objective,
    pub epsilon: f64,
    pub value: f64,
    pub point: SnrPoint,
    /// Whether the first scan peaked on the bracket edge and was widened.
    pub widened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonOptimum {
    pub homodyne: EpsilonMax,
    pub qfi: EpsilonMax,
    /// Scan samples, sorted by `ε`.
    pub samples: Vec<SnrPoint>,
}

fn scan(base: &SystemParams, lo: f64, hi: f64, cfg: &MetrologyConfig) -> Result<Vec<SnrPoint>> {
    let n = EPSILON_SCAN_POINTS;
    (0..n)
        .into_par_iter()
        .map(|k| evaluate_point(&base.with_epsilon(lo + (hi - lo) * k as f64 / (n - 1) as f64), cfg))
        .collect()
}

fn argmax(samples: &[SnrPoint], objective: Objective) -> usize {
    let mut best = 0;
    for (k, s) in samples.iter().enumerate() {
        if objective.of(s) > objective.of(&samples[best]) {
            best = k;
        }
    }
    best
}

fn refine(base: &SystemParams, samples: &[SnrPoint], k: usize, objective: Objective, cfg: &MetrologyConfig, widened: bool) -> Result<EpsilonMax> {
    let lo = samples[k.saturating_sub(1)].params.epsilon;
    let hi = samples[(k + 1).min(samples.len() - 1)].params.epsilon;
    let needs = match objective {
        Objective::Homodyne => Needs { derivative: true, qfi: false, forward: false },
        Objective::Qfi => Needs { derivative: false, qfi: true, forward: false },
    };
    let f = |eps: f64| -> Result<f64> {
        let a = analyze(&base.with_epsilon(eps), cfg, needs)?;
        Ok(match objective {
            Objective::Homodyne => a.landscape().expect("derivative requested").maximize().1,
            Objective::Qfi => a.qfi.expect("qfi requested").value,
        })
    };
    let (eps, value) = golden_section_max(f, lo, hi, EPSILON_TOL * base.gamma)?;
    let point = if value > objective.of(&samples[k]) { evaluate_point(&base.with_epsilon(eps), cfg)? } else { samples[k].clone() };
    let value = objective.of(&point);
    Ok(EpsilonMax { objective, epsilon: point.params.epsilon, value, point, widened })
}

/// Maximizers over `ε ∈ [ε_c/2, 2ε_c]` of the homodyne SNR and of the QFI.
pub fn maximize_over_epsilon(omega: f64, chi: f64, gamma: f64, cfg: &MetrologyConfig) -> Result<EpsilonOptimum> {
    let base = SystemParams::new(omega, 0.0, chi, gamma)?;
    let ec = base.eps_c();
    let (lo, hi) = (0.5 * ec, 2.0 * ec);
    let first = scan(&base, lo, hi, cfg)?;
    let mut samples = first.clone();
    let mut results = Vec::new();
    for objective in [Objective::Homodyne, Objective::Qfi] {
        let k = argmax(&first, objective);
        if k > 0 && k + 1 < first.len() {
            results.push(refine(&base, &first, k, objective, cfg, false)?);
            continue;
        }
        let width = hi - lo;
        let (wlo, whi) = if k == 0 { ((lo - width / 2.0).max(1e-3 * ec), lo + width / 2.0) } else { (hi - width / 2.0, hi + width / 2.0) };
        warn!("{objective:?} maximum on the bracket edge, widening to [{wlo}, {whi}]");
        let second = scan(&base, wlo, whi, cfg)?;
        let k2 = argmax(&second, objective);
        if k2 == 0 || k2 + 1 == second.len() {
            return Err(Error::BracketEdge { lo: wlo, hi: whi });
        }
        results.push(refine(&base, &second, k2, objective, cfg, true)?);
        samples.extend(second);
    }
    samples.sort_by(|a, b| a.params.epsilon.total_cmp(&b.params.epsilon));
    samples.dedup_by(|a, b| a.params.epsilon == b.params.epsilon);
    let qfi = results.pop().expect("two objectives");
    let homodyne = results.pop().expect("two objectives");
    Ok(EpsilonOptimum { homodyne, qfi, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub c: f64,
    /// `‖S − c/(χΓ)‖ / ‖S‖`.
    pub rel_residual: f64,
}

/// Least-squares fit of `S = c/(χΓ)` through the origin.
pub fn scaling_fit_c(chis: &[f64], values: &[f64], gamma: f64) -> Result<ScalingFit> {
    if chis.len() != values.len() {
        return Err(Error::DimensionMismatch { left: chis.len(), right: values.len() });
    }
    if chis.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: chis.len() });
    }
    let xs: Vec<f64> = chis.iter().map(|c| 1.0 / (c * gamma)).collect();
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let c = sxy / sxx;
    let res: f64 = xs.iter().zip(values).map(|(x, y)| (y - c * x).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = values.iter().map(|y| y * y).sum::<f64>().sqrt();
    Ok(ScalingFit { c, rel_residual: res / norm })
}

/// Log-log slope of the optimal photon number against `χ`.
pub fn heisenberg_scaling_check(chis: &[f64], n_stars: &[f64]) -> Result<f64> {
    if chis.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: chis.len() });
    }
    log_log_slope(chis, n_stars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub omega: f64,
    pub gamma: f64,
    pub chis: Vec<f64>,
    pub optima: Vec<EpsilonOptimum>,
    pub fit: ScalingFit,
    pub slope: f64,
    /// `𝒮 / N*²` per `χ`.
    pub heisenberg_ratio: Vec<f64>,
}

pub fn scaling_study(omega: f64, gamma: f64, chis: &[f64], cfg: &MetrologyConfig) -> Result<ScalingStudy> {
    let optima = chis.iter().map(|&chi| maximize_over_epsilon(omega, chi, gamma, cfg)).collect::<Result<Vec<_>>>()?;
    let s: Vec<f64> = optima.iter().map(|o| o.homodyne.value).collect();
    let n: Vec<f64> = optima.iter().map(|o| o.homodyne.point.photon_number).collect();
    Ok(ScalingStudy {
        omega,
        gamma,
        chis: chis.to_vec(),
        fit: scaling_fit_c(chis, &s, gamma)?,
        slope: heisenberg_scaling_check(chis, &n)?,
        heisenberg_ratio: s.iter().zip(&n).map(|(s, n)| s / (n * n)).collect(),
        optima,
    })
}

/// Rescaled photon number `⟨n⟩/L` with `χ = χ0/L`. Points whose truncation
/// exceeds the budget are `NaN` and flag the result as partial.
pub fn thermodynamic_sweep(omega: f64, chi0: f64, gamma: f64, ls: &[f64], epsilons: &[f64], trunc: &Truncation) -> Result<SweepResult> {
    SystemParams::new(omega, 0.0, chi0, gamma)?;
    let grid: Vec<(f64, f64)> = ls.iter().flat_map(|&l| epsilons.iter().map(move |&e| (l, e))).collect();
    let points: Vec<Result<DensityMatrix>> = grid
        .par_iter()
        .map(|&(l, e)| {
            let p = SystemParams::new(omega, e, chi0 / l, gamma)?;
            crate::liouvillian::steady_state_adaptive(&p, trunc)
        })
        .collect();
    let mut n = Vec::with_capacity(grid.len());
    let mut n_over_l = Vec::with_capacity(grid.len());
    let mut dims = Vec::with_capacity(grid.len());
    let mut failures = 0usize;
    for ((l, e), r) in grid.iter().zip(points) {
        match r {
            Ok(rho) => {
                let np = rho.photon_number();
                n.push(np);
                n_over_l.push(np / l);
                dims.push(rho.dim() as f64);
            }
            Err(err @ (Error::Truncation { .. } | Error::Residual { .. } | Error::SingularSteadyState { .. })) => {
                warn!("L = {l}, ε = {e}: {err}");
                failures += 1;
                n.push(f64::NAN);
                n_over_l.push(f64::NAN);
                dims.push(f64::NAN);
            }
            Err(err) => return Err(err),
        }
    }
    let mut out = SweepResult::new(vec![Axis { name: "L".into(), values: ls.to_vec() }, Axis { name: "epsilon".into(), values: epsilons.to_vec() }]);
    out.insert("n_photon", n)?;
    out.insert("n_over_l", n_over_l)?;
    out.insert("dim_used", dims)?;
    out.metadata.insert("omega".into(), serde_json::json!(omega));
    out.metadata.insert("chi0".into(), serde_json::json!(chi0));
    out.metadata.insert("gamma".into(), serde_json::json!(gamma));
    out.metadata.insert("tail_tol".into(), serde_json::json!(trunc.tail_tol));
    out.metadata.insert("max_dim".into(), serde_json::json!(trunc.max_dim));
    out.metadata.insert("partial".into(), serde_json::json!(failures > 0));
    out.metadata.insert("failed_points".into(), serde_json::json!(failures));
    Ok(out)
}

/// Relative change of `⟨n⟩` and `⟨x_φ²⟩` when the truncation grows by `extra` levels.
pub fn truncation_sensitivity(p: &SystemParams, dim: usize, extra: usize, phi: f64) -> Result<f64> {
    let a = steady_state(p, dim)?;
    let b = steady_state(p, dim + extra)?;
    let rel = |x: f64, y: f64| if y.abs() > 0.0 { (x / y - 1.0).abs() } else { x.abs() };
    Ok(rel(a.photon_number(), b.photon_number()).max(rel(a.quadrature_moments(phi).0, b.quadrature_moments(phi).0)))
}
