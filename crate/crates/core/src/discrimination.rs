//! Equal-prior binary discrimination of two states: the Helstrom optimum and
//! a single-quadrature homodyne strategy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{trapezoid, DensityMatrix, GridSpec, MarginalBasis, QuadratureMarginal};
use crate::numerics::{golden_section_max, trace_norm};

pub const ANGLE_SCAN_POINTS: usize = 32;
pub const ANGLE_TOL: f64 = 1e-4;
pub const DOMINANCE_SLACK: f64 = 1e-9;
pub const TIE_FLOOR: f64 = 1e-12;

/// `½[1 − ½‖ρ_e − ρ_g‖₁]`.
pub fn helstrom_error(rho_e: &DensityMatrix, rho_g: &DensityMatrix) -> Result<f64> {
    if rho_e.dim() != rho_g.dim() {
        return Err(Error::DimensionMismatch { left: rho_e.dim(), right: rho_g.dim() });
    }
    let distance = trace_norm(&rho_e.matrix().sub(rho_g.matrix()))?;
    Ok((0.5 * (1.0 - 0.5 * distance)).clamp(0.0, 0.5))
}

/// Homodyne error and decision region for a pair of marginals on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomodyneDecision {
    pub phi: f64,
    pub p_err: f64,
    /// Closed intervals of `x` declared `e`; everything else is declared `g`.
    pub accept_e: Vec<(f64, f64)>,
}

/// `½∫min{P_g, P_e}`, declaring `g` wherever `P_g ≥ P_e`.
pub fn decide(pe: &QuadratureMarginal, pg: &QuadratureMarginal) -> Result<HomodyneDecision> {
    if pe.grid != pg.grid {
        return Err(Error::InvalidParameter { name: "grid", value: pe.grid.len() as f64, reason: "marginals must share one grid" });
    }
    let low: Vec<f64> = pe.density.iter().zip(&pg.density).map(|(e, g)| e.min(*g)).collect();
    let p_err = (0.5 * trapezoid(&pe.grid, &low)).clamp(0.0, 0.5);
    // Differences at the rounding level of the densities count as ties.
    let peak = pe.density.iter().chain(&pg.density).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = TIE_FLOOR * peak;
    let mut accept_e = Vec::new();
    let mut start: Option<f64> = None;
    for (i, &x) in pe.grid.iter().enumerate() {
        let e_wins = pe.density[i] - pg.density[i] > floor;
        match (e_wins, start) {
            (true, None) => start = Some(x),
            (false, Some(s)) => {
                accept_e.push((s, pe.grid[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some(&last)) = (start, pe.grid.last()) {
        accept_e.push((s, last));
    }
    Ok(HomodyneDecision { phi: pe.phi, p_err, accept_e })
}

/// Precomputed marginal bases of a state pair on a shared grid.
#[derive(Debug, Clone)]
pub struct HomodyneDiscriminator {
    e: MarginalBasis,
    g: MarginalBasis,
}

impl HomodyneDiscriminator {
    /// The grid half-width defaults to the wider of the two states' choices.
    pub fn new(rho_e: &DensityMatrix, rho_g: &DensityMatrix, spec: GridSpec) -> Self {
        let n = rho_e.photon_number().max(rho_g.photon_number());
        let grid = spec.grid(n);
        Self { e: MarginalBasis::new(rho_e, grid.clone()), g: MarginalBasis::new(rho_g, grid) }
    }

    pub fn decision(&self, phi: f64) -> Result<HomodyneDecision> {
        decide(&self.e.marginal(phi)?, &self.g.marginal(phi)?)
    }

    pub fn error(&self, phi: f64) -> Result<f64> {
        Ok(self.decision(phi)?.p_err)
    }

    /// `(φ*, P*)` from a scan of `[0, π)` refined by golden section.
    pub fn optimize(&self) -> Result<(f64, f64)> {
        let step = PI / ANGLE_SCAN_POINTS as f64;
        let mut best = (0.0, f64::INFINITY);
        for k in 0..ANGLE_SCAN_POINTS {
            let phi = k as f64 * step;
            let p = self.error(phi)?;
            if p < best.1 {
                best = (phi, p);
            }
        }
        let (phi, neg) = golden_section_max(|phi| self.error(phi).map(|p| -p), best.0 - step, best.0 + step, ANGLE_TOL)?;
        Ok(if -neg < best.1 { (phi.rem_euclid(PI), -neg) } else { best })
    }
}

pub fn homodyne_error(rho_e: &DensityMatrix, rho_g: &DensityMatrix, phi: f64, spec: GridSpec) -> Result<f64> {
    HomodyneDiscriminator::new(rho_e, rho_g, spec).error(phi)
}

pub fn optimize_homodyne_angle(rho_e: &DensityMatrix, rho_g: &DensityMatrix, spec: GridSpec) -> Result<(f64, f64)> {
    HomodyneDiscriminator::new(rho_e, rho_g, spec).optimize()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationResult {
    pub p_err_opt: f64,
    pub p_err_hom: f64,
    pub phi_opt: f64,
    /// Quadrature intervals declared `e` at `phi_opt`.
    pub threshold_set: Vec<(f64, f64)>,
}

/// Helstrom and optimized homodyne errors, checked for Helstrom dominance.
pub fn discriminate(rho_e: &DensityMatrix, rho_g: &DensityMatrix, spec: GridSpec) -> Result<DiscriminationResult> {
    let p_err_opt = helstrom_error(rho_e, rho_g)?;
    let disc = HomodyneDiscriminator::new(rho_e, rho_g, spec);
    let (phi_opt, p_err_hom) = disc.optimize()?;
    if p_err_opt > p_err_hom + DOMINANCE_SLACK {
        return Err(Error::InvalidState(format!("Helstrom error {p_err_opt:e} above homodyne error {p_err_hom:e}")));
    }
    Ok(DiscriminationResult { p_err_opt, p_err_hom, phi_opt, threshold_set: disc.decision(phi_opt)?.accept_e })
}
