//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kerrcrit::applications::{
    eta_monotone_rows, magnetometer_sensitivity, readout_contour, readout_map, readout_steady_pair, MagnetometerParams,
    ReadoutConfig, ReadoutParams, DEFAULT_SCALING_C,
};
use kerrcrit::discrimination::{discriminate, helstrom_error};
use kerrcrit::fock::{annihilation, build_hamiltonian, number, DensityMatrix, GridSpec, SystemParams};
use kerrcrit::gaussian::{broken_phase_qfi_scaling, gaussian_photon_number, gaussian_qfi, lyapunov_residual, normal_covariance, photon_number_snr};
use kerrcrit::liouvillian::{build_liouvillian, steady_state, steady_state_adaptive, time_evolve, vec_index, TimeGrid, Truncation};
use kerrcrit::metrology::{
    evaluate_point, heterodyne_snr_from, maximize_over_epsilon, qfi_numeric, scaling_fit_c, heisenberg_scaling_check, snr_photon_number,
    thermodynamic_sweep, truncation_sensitivity, EpsilonOptimum, HomodyneLandscape, MetrologyConfig, MomentDerivative,
};
use kerrcrit::numerics::{eigh, fidelity, lu_solve, trace_norm, ComplexMatrix, C64};
use kerrcrit::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    (actual / expected - 1.0).abs() <= rel
}

fn params(omega: f64, epsilon: f64, chi: f64) -> SystemParams {
    SystemParams::new(omega, epsilon, chi, 1.0).expect("valid parameters")
}

fn gaussian_limit() -> Result<Outcome> {
    let start = Instant::now();
    let ec = 2f64.sqrt();
    let p = params(1.0, 0.7 * ec, 1e-3);
    let rho = steady_state_adaptive(&p, &Truncation::default())?;
    let n = rho.photon_number();
    let n_g = gaussian_photon_number(1.0, p.epsilon, 1.0)?;
    let q = qfi_numeric(&p, &MetrologyConfig::default())?.value;
    let q_g = gaussian_qfi(1.0, p.epsilon, 1.0)?;
    let t = start.elapsed();
    outcome(
        within(n, n_g, 0.02) && within(q, q_g, 0.05) && t < Duration::from_secs(60),
        format!("<n> = {n:.5} vs {n_g:.5}; QFI = {q:.5} vs {q_g:.5}; {:.2}s", t.as_secs_f64()),
    )
}

fn covariance_oracle() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let omega = -2.0 + 4.0 * i as f64 / 19.0;
        let ec = f64::hypot(omega, 1.0);
        for j in 0..20 {
            let eps = 0.95 * ec * j as f64 / 19.0;
            let s = normal_covariance(omega, eps, 1.0)?;
            worst = worst.max(lyapunov_residual(omega, eps, 1.0, &s.sigma));
        }
    }
    let s = normal_covariance(0.0, 0.5, 1.0)?.sigma;
    let expect = [[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
    let dev = (0..4).map(|k| (s[k / 2][k % 2] - expect[k / 2][k % 2]).abs()).fold(0.0, f64::max);
    outcome(worst < 1e-12 && dev < 1e-12, format!("max Lyapunov residual {worst:.2e}; example deviation {dev:.2e}"))
}

fn homodyne_saturation(opt: &EpsilonOptimum, t: Duration) -> Result<Outcome> {
    let ratio = opt.homodyne.value / opt.qfi.value;
    outcome(
        ratio >= 0.9 && t < Duration::from_secs(600),
        format!(
            "max S_hom = {:.4} at eps = {:.4}, max QFI = {:.4} at eps = {:.4}, ratio {ratio:.4}; {:.1}s",
            opt.homodyne.value,
            opt.homodyne.epsilon,
            opt.qfi.value,
            opt.qfi.epsilon,
            t.as_secs_f64()
        ),
    )
}

fn scaling_constant(chis: &[f64], optima: &[EpsilonOptimum], t: Duration) -> Result<Outcome> {
    let s: Vec<f64> = optima.iter().map(|o| o.homodyne.value).collect();
    let fit = scaling_fit_c(chis, &s, 1.0)?;
    outcome(
        (0.45..=0.65).contains(&fit.c) && fit.rel_residual < 0.1 && t < Duration::from_secs(1800),
        format!("c = {:.4} (residual {:.3}); S*chi = {:?}; {:.1}s", fit.c, fit.rel_residual, s.iter().zip(chis).map(|(s, c)| round4(s * c)).collect::<Vec<_>>(), t.as_secs_f64()),
    )
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn heisenberg(chis: &[f64], optima: &[EpsilonOptimum]) -> Result<Outcome> {
    let n: Vec<f64> = optima.iter().map(|o| o.homodyne.point.photon_number).collect();
    let slope = heisenberg_scaling_check(chis, &n)?;
    let ratio: Vec<f64> = optima.iter().zip(&n).map(|(o, n)| round4(o.homodyne.value / (n * n))).collect();
    outcome((slope + 0.5).abs() <= 0.1, format!("slope {slope:.4}; N* = {:?}; S/N*^2 = {ratio:?}", n.iter().map(|v| round4(*v)).collect::<Vec<_>>()))
}

fn broken_phase() -> Result<Outcome> {
    let ratios: Vec<f64> = (0..10).map(|k| 5.0 * 10f64.powf(k as f64 / 9.0)).collect();
    let slope = broken_phase_qfi_scaling(0.0, 0.04, 1.0, &ratios)?;
    let p = params(0.0, 3.0, 0.04);
    let full = snr_photon_number(&p, &MetrologyConfig::default())?;
    let closed = photon_number_snr(0.0, 3.0, 0.04, 1.0)?;
    outcome(
        (slope + 1.0).abs() <= 0.05 && within(full, closed, 0.25),
        format!("closed-form slope {slope:.4} on eps/eps_c in [5, 50]; spot check {full:.4} vs {closed:.4} (ratio {:.3})", full / closed),
    )
}

struct Readout {
    pass: bool,
    detail: String,
    sweet: (f64, f64, f64),
}

fn readout_sweet_spot() -> Result<Readout> {
    let start = Instant::now();
    let cfg = ReadoutConfig::default();
    let deltas: Vec<f64> = (0..20).map(|k| 1.0 + 9.0 * k as f64 / 19.0).collect();
    let eps: Vec<f64> = (0..20).map(|k| 0.5 + 2.5 * k as f64 / 19.0).collect();
    let map = readout_map(&deltas, &eps, 0.04, 0.0, &cfg)?;
    let map_time = start.elapsed();
    let (po, ph) = (map.field("p_opt").unwrap_or(&[]), map.field("p_hom").unwrap_or(&[]));
    let map_ok = po.len() == 400 && po.iter().zip(ph).all(|(o, h)| o.is_finite() && *o <= h + 1e-9);
    let monotone = eta_monotone_rows(&map);
    let contour_deltas: Vec<f64> = deltas.iter().copied().filter(|d| *d >= 2.5).collect();
    let contour = readout_contour(&contour_deltas, 1e-2, 0.04, 0.0, &cfg)?;
    let dominance = contour.points.iter().all(|p| p.p_opt <= p.p_hom + 1e-9);
    let best_opt = contour.best_optimal().expect("non-empty contour").clone();
    let best_hom = contour.best_homodyne().expect("non-empty contour").clone();
    let offset = contour.minimizer_offset().unwrap_or(usize::MAX);
    let pass = map_ok && monotone && dominance && best_opt.p_opt <= 1e-3 && best_hom.p_hom <= 1e-2 && offset <= 1 && map_time < Duration::from_secs(1800);
    Ok(Readout {
        pass,
        detail: format!(
            "eta=1e-2 contour: min P_opt = {:.2e} at dw = {:.3}, eps = {:.4} (N_g = {:.2}); min P_hom = {:.2e} at dw = {:.3}; minimizer offset {offset} cells; map P_opt <= P_hom: {map_ok}; eta monotone rows: {monotone}; 20x20 map {:.1}s",
            best_opt.p_opt,
            best_opt.delta_omega,
            best_opt.epsilon,
            best_opt.n_g,
            best_hom.p_hom,
            best_hom.delta_omega,
            map_time.as_secs_f64()
        ),
        sweet: (best_opt.delta_omega, best_opt.epsilon, best_opt.phi_opt),
    })
}

fn transient((delta_omega, epsilon, phi): (f64, f64, f64)) -> Result<Outcome> {
    let base = params(0.0, epsilon, 0.04);
    let pair = readout_steady_pair(&base, &ReadoutParams { delta_omega, g: 100.0 }, &ReadoutConfig::default().truncation)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (label, p, rho) in [("g", base, &pair.rho_g), ("e", base.with_omega(delta_omega), &pair.rho_e)] {
        let traj = time_evolve(&DensityMatrix::vacuum(rho.dim()), &p, &TimeGrid::uniform(10.0, 21, phi))?;
        let target = rho.quadrature_moments(phi).0;
        let last = *traj.x_phi_sq.last().expect("samples");
        let rel = (last / target - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!("{label}: <x^2> = {last:.4} vs {target:.4}"));
    }
    outcome(worst <= 0.05, format!("dw = {delta_omega:.3}, eps = {epsilon:.4}, phi = {phi:.3}; {}; worst deviation {worst:.2e} at t = 10", parts.join(", ")))
}

fn magnetometer() -> Result<Outcome> {
    let r = magnetometer_sensitivity(&MagnetometerParams::default(), DEFAULT_SCALING_C)?;
    let prefactor = r.closed_form / (r.params.gamma0 * r.params.chi0).sqrt() * r.params.omega_l4;
    outcome(
        r.sensitivity >= 5.2e-7 && r.sensitivity <= 6.4e-7 && r.bound_respected && (r.sensitivity / r.closed_form - 1.0).abs() < 1e-10,
        format!("{:.4e} per sqrt(Hz); prefactor {prefactor:.4} vs bound 6.5 (two significant figures); chi/Gamma = {:.2e}", r.sensitivity, r.chi_over_gamma),
    )
}

fn random_state(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let g = ComplexMatrix::from_fn(dim, |_, j| if j < rank { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { C64::new(0.0, 0.0) });
    let m = g.matmul(&g.adjoint());
    let tr = m.trace().re;
    DensityMatrix::new(m.scale(C64::new(1.0 / tr, 0.0)).hermitian_part()).expect("random state")
}

/// `L ∂ρ = −(∂_ω L)ρ`, `Tr ∂ρ = 0`, solved densely.
fn exact_response(p: &SystemParams, dim: usize) -> Result<(DensityMatrix, ComplexMatrix)> {
    let rho = steady_state(p, dim)?;
    let l = build_liouvillian(p, dim)?.matrix;
    let r0 = vec_index(0, 0, dim);
    let a = ComplexMatrix::from_fn(dim * dim, |r, c| if r == r0 { C64::new(if c % (dim + 1) == 0 { 1.0 } else { 0.0 }, 0.0) } else { l.get(r, c) });
    let mut rhs = vec![C64::new(0.0, 0.0); dim * dim];
    for m in 0..dim {
        for n in 0..dim {
            if (m, n) != (0, 0) {
                rhs[vec_index(m, n, dim)] = C64::new(0.0, m as f64 - n as f64) * rho.get(m, n);
            }
        }
    }
    let x = lu_solve(&a, &rhs)?;
    Ok((rho, ComplexMatrix::from_fn(dim, |m, n| x[vec_index(m, n, dim)]).hermitian_part()))
}

fn sld_qfi(rho: &DensityMatrix, d: &ComplexMatrix) -> Result<f64> {
    let e = eigh(rho.matrix())?;
    let dd = e.eigenvectors.adjoint().matmul(d).matmul(&e.eigenvectors);
    let lam: Vec<f64> = e.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let mut q = 0.0;
    for i in 0..lam.len() {
        for j in 0..lam.len() {
            if lam[i] + lam[j] > 1e-14 {
                q += 2.0 * dd[(i, j)].norm_sqr() / (lam[i] + lam[j]);
            }
        }
    }
    Ok(q)
}

fn brute_force_liouvillian(p: &SystemParams, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    let dim = rho.dim();
    let h = build_hamiltonian(p, dim)?.matrix;
    let a = annihilation(dim)?.matrix;
    let ad = a.adjoint();
    let n = ad.matmul(&a);
    let i = C64::new(0.0, 1.0);
    let comm = h.matmul(rho).sub(&rho.matmul(&h)).scale(-i);
    let diss = a.matmul(rho).matmul(&ad).scale(C64::new(2.0, 0.0)).sub(&n.matmul(rho)).sub(&rho.matmul(&n));
    Ok(comm.add(&diss.scale(C64::new(p.gamma, 0.0))))
}

fn property_suites() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();

    // Fidelity and trace-norm axioms.
    let mut axioms = true;
    for _ in 0..20 {
        let dim = rng.gen_range(2..8);
        let (r, s, t) = (random_state(dim, rng.gen_range(1..=dim), &mut rng), random_state(dim, dim, &mut rng), random_state(dim, dim, &mut rng));
        let f_rs = fidelity(r.matrix(), s.matrix())?;
        let f_sr = fidelity(s.matrix(), r.matrix())?;
        axioms &= (0.0..=1.0).contains(&f_rs) && (f_rs - f_sr).abs() < 1e-10;
        axioms &= (fidelity(r.matrix(), r.matrix())? - 1.0).abs() < 1e-9;
        let d_rs = trace_norm(&r.matrix().sub(s.matrix()))?;
        let d_st = trace_norm(&s.matrix().sub(t.matrix()))?;
        let d_rt = trace_norm(&r.matrix().sub(t.matrix()))?;
        axioms &= d_rt <= d_rs + d_st + 1e-12 && d_rs <= 2.0 + 1e-12;
        axioms &= trace_norm(&r.matrix().sub(r.matrix()))? < 1e-12;
        // Fuchs–van de Graaf.
        let root = f_rs.sqrt();
        axioms &= 1.0 - root <= 0.5 * d_rs + 1e-9 && 0.5 * d_rs <= (1.0 - f_rs).sqrt() + 1e-9;
    }
    if !axioms {
        failures.push("fidelity/trace-norm axioms");
    }

    // Fisher hierarchy with exact derivatives.
    let mut hierarchy = true;
    for _ in 0..12 {
        let p = params(rng.gen_range(-2.0..2.0), rng.gen_range(0.05..2.5), rng.gen_range(0.3..1.0));
        let (rho, d) = exact_response(&p, 12)?;
        let q = sld_qfi(&rho, &d)?;
        let dim = rho.dim();
        let a = annihilation(dim)?.matrix;
        let der = MomentDerivative { dn: number(dim)?.matrix.trace_product(&d).re, da2: a.matmul(&a).trace_product(&d) };
        let land = HomodyneLandscape { moments: rho.moments(), derivative: der };
        hierarchy &= land.maximize().1 <= q * (1.0 + 1e-6);
        hierarchy &= (0..32).all(|k| land.snr(k as f64 * PI / 32.0).map(|s| s <= q * (1.0 + 1e-6)).unwrap_or(false));
        hierarchy &= heterodyne_snr_from(&rho.moments(), &der)? <= q * (1.0 + 1e-6);
    }
    let cfg = MetrologyConfig::default();
    for (w, e, c) in [(1.0, 1.2, 0.1), (0.0, 0.8, 0.2), (-0.5, 2.0, 0.15)] {
        let pt = evaluate_point(&params(w, e, c), &cfg)?;
        hierarchy &= pt.hierarchy_holds(2.0 * cfg.rel_tol);
    }
    if !hierarchy {
        failures.push("Fisher hierarchy");
    }

    // Helstrom dominance on readout pairs.
    let mut dominance = true;
    for _ in 0..8 {
        let g = params(0.0, rng.gen_range(0.5..2.5), rng.gen_range(0.1..0.4));
        let pair = readout_steady_pair(&g, &ReadoutParams { delta_omega: rng.gen_range(0.1..3.0), g: 100.0 }, &Truncation::default())?;
        let r = discriminate(&pair.rho_e, &pair.rho_g, GridSpec::default())?;
        dominance &= r.p_err_opt <= r.p_err_hom + 1e-9 && (helstrom_error(&pair.rho_g, &pair.rho_e)? - r.p_err_opt).abs() < 1e-12;
    }
    if !dominance {
        failures.push("Helstrom dominance");
    }

    // Z2 symmetry of steady states.
    let mut z2 = true;
    for _ in 0..10 {
        let p = params(rng.gen_range(-2.0..2.0), rng.gen_range(0.0..3.0), rng.gen_range(0.05..0.5));
        let rho = steady_state_adaptive(&p, &Truncation::default())?;
        z2 &= rho.mean_field().norm() < 1e-12 && rho.parity_defect() == 0.0;
    }
    if !z2 {
        failures.push("Z2 invariants");
    }

    // Truncation convergence.
    let mut trunc = true;
    for (w, e, c) in [(1.0, 1.2, 0.04), (0.0, 2.0, 0.04), (1.0, 0.9, 0.1), (-1.0, 2.5, 0.08)] {
        let p = params(w, e, c);
        let rho = steady_state_adaptive(&p, &Truncation::default())?;
        trunc &= truncation_sensitivity(&p, rho.dim(), 10, 0.4)? < 1e-3;
    }
    if !trunc {
        failures.push("truncation 0.1% rule");
    }

    // Dim-4 Liouvillian against the direct operator formula.
    let mut brute = 0.0f64;
    for _ in 0..5 {
        let p = params(rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0));
        let sup = build_liouvillian(&p, 4)?;
        let rho = random_state(4, 4, &mut rng);
        let direct = brute_force_liouvillian(&p, rho.matrix())?;
        brute = brute.max(sup.apply(rho.matrix()).sub(&direct).max_abs());
    }
    if brute > 1e-12 {
        failures.push("dim-4 Liouvillian");
    }

    let detail = if failures.is_empty() {
        format!("axioms, Fisher hierarchy, Helstrom dominance, Z2, truncation, dim-4 brute force (max deviation {brute:.1e})")
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn thermodynamic_limit() -> Result<Outcome> {
    let ls = [5.0, 10.0, 20.0];
    let sweep = thermodynamic_sweep(0.0, 1.0, 1.0, &ls, &[2.0], &Truncation::default())?;
    let v = sweep.field("n_over_l").unwrap_or(&[]).to_vec();
    let ok = v.len() == 3 && v.iter().all(|x| x.is_finite());
    let (d1, d2) = if ok { ((v[1] - v[0]).abs(), (v[2] - v[1]).abs()) } else { (f64::NAN, f64::NAN) };
    outcome(ok && d2 < d1, format!("<n>/L at eps = 2, chi0 = 1: {:?}; successive differences {d1:.4e}, {d2:.4e}", v.iter().map(|x| round4(*x)).collect::<Vec<_>>()))
}

fn report(id: usize, name: &str, r: Result<Outcome>, results: &mut Vec<bool>) {
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(pass);
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(1, "Gaussian limit", gaussian_limit(), &mut results);
    report(2, "covariance oracle", covariance_oracle(), &mut results);

    let cfg = MetrologyConfig::default();
    let chis = [0.04, 0.02, 0.01];
    let mut optima = Vec::new();
    let mut times = Vec::new();
    let start = Instant::now();
    for &chi in &chis {
        let t = Instant::now();
        match maximize_over_epsilon(1.0, chi, 1.0, &cfg) {
            Ok(o) => optima.push(o),
            Err(e) => {
                println!("scaling study failed at chi = {chi}: {e}");
                break;
            }
        }
        times.push(t.elapsed());
    }
    let total = start.elapsed();
    if optima.len() == chis.len() {
        report(3, "homodyne saturation", homodyne_saturation(&optima[0], times[0]), &mut results);
        report(4, "scaling constant", scaling_constant(&chis, &optima, total), &mut results);
        report(5, "Heisenberg scaling", heisenberg(&chis, &optima), &mut results);
    } else {
        for (id, name) in [(3, "homodyne saturation"), (4, "scaling constant"), (5, "Heisenberg scaling")] {
            report(id, name, Err(kerrcrit::Error::InvalidState("scaling study incomplete".into())), &mut results);
        }
    }

    report(6, "broken-phase asymptotics", broken_phase(), &mut results);
    let readout = readout_sweet_spot();
    let sweet = readout.as_ref().ok().map(|r| r.sweet);
    report(7, "readout sweet spot", readout.map(|r| Outcome { pass: r.pass, detail: r.detail }), &mut results);
    match sweet {
        Some(s) => report(8, "transient", transient(s), &mut results),
        None => report(8, "transient", Err(kerrcrit::Error::InvalidState("no sweet spot".into())), &mut results),
    }
    report(9, "magnetometer", magnetometer(), &mut results);
    report(10, "property suites", property_suites(), &mut results);
    report(11, "thermodynamic limit", thermodynamic_limit(), &mut results);

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
