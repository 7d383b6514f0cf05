//! Command runners: each turns a validated config into result tables.

use num_complex::Complex64;
use rayon::prelude::*;

use kerrcrit::applications::{magnetometer_sensitivity, readout_contour, readout_map};
use kerrcrit::fock::GridSpec;
use kerrcrit::liouvillian::{build_liouvillian, steady_state, steady_state_adaptive, time_evolve, TimeGrid};
use kerrcrit::metrology::{evaluate_point, qfi_numeric, scaling_study, thermodynamic_sweep};
use kerrcrit::sweep::{Axis, SweepResult};
use kerrcrit::{DensityMatrix, SystemParams};

use crate::config::*;
use crate::CliError;

/// Everything a command produces before it is written to disk.
#[derive(Debug, Default)]
pub struct Output {
    /// Tables keyed by file-name suffix; `None` is the main `data` table.
    pub tables: Vec<(Option<String>, SweepResult)>,
    pub rho: Option<DensityMatrix>,
    /// Failed grid points, described by their coordinates.
    pub failures: Vec<String>,
}

pub fn run(cfg: &CommandConfig) -> Result<Output, CliError> {
    match cfg {
        CommandConfig::Steady(c) => steady(c),
        CommandConfig::QfiSweep(c) => qfi_sweep(c),
        CommandConfig::SnrSweep(c) => snr_sweep(c),
        CommandConfig::Scaling(c) => scaling(c),
        CommandConfig::Thermo(c) => thermo(c),
        CommandConfig::ReadoutMap(c) => readout(c),
        CommandConfig::Magnetometer(c) => magnetometer(c),
        CommandConfig::TimeTrace(c) => time_trace(c),
        CommandConfig::Wigner(c) => wigner(c),
    }
}

fn describe(coords: &[(&str, f64)]) -> String {
    coords.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join(", ")
}

fn record(fields: &[(&str, f64)]) -> Result<SweepResult, CliError> {
    let mut t = SweepResult::new(Vec::new());
    for (name, v) in fields {
        t.insert(name, vec![*v])?;
    }
    Ok(t)
}

/// Evaluates `f` over a one-axis grid in parallel; failures become `NaN` rows.
fn sweep_1d<const K: usize>(
    axis: &str,
    values: &[f64],
    names: [&str; K],
    context: &[(&str, f64)],
    failures: &mut Vec<String>,
    f: impl Fn(f64) -> kerrcrit::Result<[f64; K]> + Sync,
) -> Result<SweepResult, CliError> {
    let rows: Vec<kerrcrit::Result<[f64; K]>> = values.par_iter().map(|&v| f(v)).collect();
    let mut cols = vec![Vec::with_capacity(values.len()); K];
    for (&v, r) in values.iter().zip(rows) {
        let row = r.unwrap_or_else(|e| {
            let mut coords = context.to_vec();
            coords.push((axis, v));
            failures.push(format!("{}: {e}", describe(&coords)));
            [f64::NAN; K]
        });
        for (c, x) in cols.iter_mut().zip(row) {
            c.push(x);
        }
    }
    let mut t = SweepResult::new(vec![Axis { name: axis.into(), values: values.to_vec() }]);
    for (name, c) in names.iter().zip(cols) {
        t.insert(name, c)?;
    }
    Ok(t)
}

/// Coordinates of the `NaN` entries of `field`.
fn nan_failures(t: &SweepResult, field: &str) -> Vec<String> {
    let Some(f) = t.field(field) else { return Vec::new() };
    f.iter()
        .enumerate()
        .filter(|(_, v)| v.is_nan())
        .map(|(k, _)| {
            let coords: Vec<(&str, f64)> = t.axes.iter().map(|a| a.name.as_str()).zip(t.coordinates(k)).collect();
            format!("{}: point failed", describe(&coords))
        })
        .collect()
}

fn steady(c: &SteadyConfig) -> Result<Output, CliError> {
    let p = c.params()?;
    let rho = match c.dim {
        Some(d) => steady_state(&p, d)?,
        None => steady_state_adaptive(&p, &c.truncation()?)?,
    };
    let residual = build_liouvillian(&p, rho.dim())?.residual(rho.matrix());
    let (x2, x4) = rho.quadrature_moments(c.phi);
    let table = record(&[
        ("n_photon", rho.photon_number()),
        ("purity", rho.purity()),
        ("tail_mass", rho.tail_mass()),
        ("dim_used", rho.dim() as f64),
        ("x_phi_sq", x2),
        ("x_phi_fourth", x4),
        ("residual", residual),
        ("parity_defect", rho.parity_defect()),
    ])?;
    Ok(Output { tables: vec![(None, table)], rho: Some(rho), failures: Vec::new() })
}

fn qfi_sweep(c: &QfiSweepConfig) -> Result<Output, CliError> {
    let cfg = c.metrology()?;
    let mut out = Output::default();
    for chi in c.chi.values() {
        let f = |eps: f64| -> kerrcrit::Result<[f64; 4]> {
            let p = SystemParams::new(c.omega, eps, chi, c.gamma)?;
            let q = qfi_numeric(&p, &cfg)?;
            let rho = steady_state_adaptive(&p, &cfg.truncation)?;
            Ok([q.value, rho.photon_number(), rho.dim() as f64, q.dw])
        };
        let mut t = sweep_1d("epsilon", &c.epsilon.values(), ["qfi", "n_photon", "dim_used", "dw"], &[("chi", chi)], &mut out.failures, f)?;
        t.metadata.insert("chi".into(), serde_json::json!(chi));
        out.tables.push((Some(format!("chi-{chi}")), t));
    }
    Ok(out)
}

fn snr_sweep(c: &SnrSweepConfig) -> Result<Output, CliError> {
    let cfg = c.metrology()?;
    let mut out = Output::default();
    let names = ["snr_hom", "snr_het", "qfi", "phi_opt", "n_photon", "dim_used", "dw_snr", "dw_qfi"];
    let f = |eps: f64| -> kerrcrit::Result<[f64; 8]> {
        let p = SystemParams::new(c.omega, eps, c.chi, c.gamma)?;
        let s = evaluate_point(&p, &cfg)?;
        Ok([s.snr_hom, s.snr_het, s.qfi, s.phi_opt, s.photon_number, s.dim as f64, s.dw_snr, s.dw_qfi])
    };
    let t = sweep_1d("epsilon", &c.epsilon.values(), names, &[("chi", c.chi)], &mut out.failures, f)?;
    out.tables.push((None, t));
    Ok(out)
}

fn scaling(c: &ScalingConfig) -> Result<Output, CliError> {
    let cfg = c.metrology()?;
    let chis = c.chi.values();
    let study = scaling_study(c.omega, c.gamma, &chis, &cfg)?;
    let mut t = SweepResult::new(vec![Axis { name: "chi".into(), values: chis }]);
    let col = |f: &dyn Fn(&kerrcrit::metrology::EpsilonOptimum) -> f64| study.optima.iter().map(f).collect::<Vec<f64>>();
    t.insert("eps_hom", col(&|o| o.homodyne.epsilon))?;
    t.insert("snr_max", col(&|o| o.homodyne.value))?;
    t.insert("phi_opt", col(&|o| o.homodyne.point.phi_opt))?;
    t.insert("n_star", col(&|o| o.homodyne.point.photon_number))?;
    t.insert("eps_qfi", col(&|o| o.qfi.epsilon))?;
    t.insert("qfi_max", col(&|o| o.qfi.value))?;
    t.insert("heisenberg_ratio", study.heisenberg_ratio.clone())?;
    t.metadata.insert("c".into(), serde_json::json!(study.fit.c));
    t.metadata.insert("rel_residual".into(), serde_json::json!(study.fit.rel_residual));
    t.metadata.insert("n_star_slope".into(), serde_json::json!(study.slope));
    Ok(Output { tables: vec![(None, t)], ..Output::default() })
}

fn thermo(c: &ThermoConfig) -> Result<Output, CliError> {
    let t = thermodynamic_sweep(c.omega, c.chi0, c.gamma, &c.l.values(), &c.epsilon.values(), &c.truncation()?)?;
    let failures = nan_failures(&t, "n_photon");
    Ok(Output { tables: vec![(None, t)], rho: None, failures })
}

fn readout(c: &ReadoutMapConfig) -> Result<Output, CliError> {
    let cfg = c.readout()?;
    let deltas = c.delta_omega.values();
    let map = readout_map(&deltas, &c.epsilon.values(), c.chi, c.omega, &cfg)?;
    let mut out = Output { failures: nan_failures(&map, "p_opt"), ..Output::default() };
    if let Some(eta) = c.eta_contour {
        out.tables.push((Some("map".into()), map));
        let contour = readout_contour(&deltas, eta, c.chi, c.omega, &cfg)?;
        let mut t = SweepResult::new(vec![Axis { name: "delta_omega".into(), values: contour.points.iter().map(|p| p.delta_omega).collect() }]);
        let col = |f: &dyn Fn(&kerrcrit::applications::ContourPoint) -> f64| contour.points.iter().map(f).collect::<Vec<f64>>();
        t.insert("epsilon", col(&|p| p.epsilon))?;
        t.insert("n_g", col(&|p| p.n_g))?;
        t.insert("n_e", col(&|p| p.n_e))?;
        t.insert("eta", col(&|p| p.eta))?;
        t.insert("p_opt", col(&|p| p.p_opt))?;
        t.insert("p_hom", col(&|p| p.p_hom))?;
        t.insert("phi_opt", col(&|p| p.phi_opt))?;
        t.metadata.insert("eta".into(), serde_json::json!(eta));
        if let Some(best) = contour.best_optimal() {
            t.metadata.insert("best_delta_omega_opt".into(), serde_json::json!(best.delta_omega));
        }
        if let Some(best) = contour.best_homodyne() {
            t.metadata.insert("best_delta_omega_hom".into(), serde_json::json!(best.delta_omega));
        }
        out.tables.push((Some("contour".into()), t));
    } else {
        out.tables.push((None, map));
    }
    Ok(out)
}

fn magnetometer(c: &MagnetometerConfig) -> Result<Output, CliError> {
    let r = magnetometer_sensitivity(&c.params(), c.c)?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let t = record(&[
        ("c", r.c),
        ("phi", r.phi),
        ("omega_r", r.omega_r),
        ("chi", r.chi),
        ("chi_over_gamma", r.chi_over_gamma),
        ("snr", r.snr),
        ("measurements_per_second", r.measurements_per_second),
        ("domega_dphi", r.domega_dphi),
        ("delta_phi", r.delta_phi),
        ("sensitivity", r.sensitivity),
        ("closed_form", r.closed_form),
        ("bound", r.bound),
        ("bound_respected", flag(r.bound_respected)),
        ("validated", flag(r.validated)),
    ])?;
    Ok(Output { tables: vec![(None, t)], ..Output::default() })
}

fn time_trace(c: &TimeTraceConfig) -> Result<Output, CliError> {
    let p = c.params()?;
    let steady = steady_state_adaptive(&p, &c.truncation()?)?;
    let dim = c.dim.unwrap_or(steady.dim());
    let rho0 = match c.initial {
        InitialState::Vacuum => DensityMatrix::vacuum(dim),
    };
    let grid = TimeGrid { tolerance: c.tolerance, ..TimeGrid::uniform(c.t_final, c.samples, c.phi) };
    let traj = time_evolve(&rho0, &p, &grid)?;
    let mut t = SweepResult::new(vec![Axis { name: "t".into(), values: traj.times.clone() }]);
    t.insert("n_photon", traj.n_photon)?;
    t.insert("x_phi_sq", traj.x_phi_sq)?;
    t.insert("trace", traj.trace)?;
    t.insert("purity", traj.purity)?;
    t.metadata.insert("dim".into(), serde_json::json!(dim));
    t.metadata.insert("steady_n_photon".into(), serde_json::json!(steady.photon_number()));
    t.metadata.insert("steady_x_phi_sq".into(), serde_json::json!(steady.quadrature_moments(c.phi).0));
    t.metadata.insert("max_hermiticity_defect".into(), serde_json::json!(traj.max_hermiticity_defect));
    Ok(Output { tables: vec![(None, t)], ..Output::default() })
}

fn wigner(c: &WignerConfig) -> Result<Output, CliError> {
    let p = c.params()?;
    let rho = steady_state_adaptive(&p, &c.truncation()?)?;
    let x_max = c.x_max.unwrap_or_else(|| GridSpec::default_half_width(rho.photon_number()));
    let axis: Vec<f64> = (0..c.points).map(|k| -x_max + 2.0 * x_max * k as f64 / (c.points - 1) as f64).collect();
    let alphas: Vec<Complex64> =
        axis.iter().flat_map(|&x| axis.iter().map(move |&q| Complex64::new(x, q) / 2f64.sqrt())).collect();
    let w = kerrcrit::fock::wigner(&rho, &alphas)?;
    let h = axis[1] - axis[0];
    // W(x, p) dx dp integrates to one.
    let norm: f64 = w.iter().sum::<f64>() * h * h / 2.0;
    let mut t = SweepResult::new(vec![Axis { name: "x".into(), values: axis.clone() }, Axis { name: "p".into(), values: axis }]);
    t.insert("w", w)?;
    t.metadata.insert("dim".into(), serde_json::json!(rho.dim()));
    t.metadata.insert("n_photon".into(), serde_json::json!(rho.photon_number()));
    t.metadata.insert("norm".into(), serde_json::json!(norm));
    Ok(Output { tables: vec![(None, t)], ..Output::default() })
}
